#include "promptfolio/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "promptfolio/errors.hpp"
#include "promptfolio/rng.hpp"

namespace promptfolio {

using nlohmann::json;

double RunConfig::sigma0() const { return sigma_0 ? *sigma_0 : 0.01 / std::sqrt(double(m_p)); }

RunConfig default_config() { return RunConfig{}; }

namespace {

const std::set<std::string> kRequired = {"K", "S", "L", "m_p", "n_k", "sigma_p"};
const std::set<std::string> kKnown = {
    "K", "S", "L", "m_p", "n_k", "norm_global", "norm_local", "norm_noise", "sigma_p", "sigma_0",
    "class_prompt_mode", "class_prompt_scale", "eta", "eta_start", "E", "R", "theta", "theta_grid", "policy", "alpha",
    "alpha_grid", "K_grid", "n_mode", "seed", "replicates", "loss_mode", "n_test", "label_scheme", "snapshot_every",
    "divergence_bound", "minibatch"};

template <typename T>
T get(const json& j, const std::string& key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(key, std::string("wrong type (") + e.what() + ")");
    }
}

template <typename T>
void opt(const json& j, const std::string& key, T& out) {
    if (j.contains(key)) out = get<T>(j, key);
}

void require(bool ok, const std::string& field, const std::string& msg) {
    if (!ok) throw ConfigError(field, msg);
}

}  // namespace

void validate(const RunConfig& c) {
    require(c.K >= 1, "K", "must be >= 1");
    require(c.S >= 1, "S", "must be >= 1");
    require(c.L >= 0, "L", "must be >= 0");
    require(c.m_p >= 1 + c.S + c.L, "m_p", "must be >= 1+S+L");
    require(c.n_k >= 1, "n_k", "must be >= 1");
    require(c.norm_global > 0 && std::isfinite(c.norm_global), "norm_global", "must be > 0");
    require(c.norm_local > 0 && std::isfinite(c.norm_local), "norm_local", "must be > 0");
    require(c.norm_noise > 0 && std::isfinite(c.norm_noise), "norm_noise", "must be > 0");
    require(c.sigma_p >= 0 && std::isfinite(c.sigma_p), "sigma_p", "must be >= 0");
    require(c.sigma0() > 0 && std::isfinite(c.sigma0()), "sigma_0", "must be > 0");
    require(c.class_scale >= 0 && std::isfinite(c.class_scale), "class_prompt_scale", "must be >= 0");
    require(!c.eta || (*c.eta > 0 && std::isfinite(*c.eta)), "eta", "must be > 0 or \"auto\"");
    require(c.eta_start > 0, "eta_start", "must be > 0");
    require(c.E >= 1, "E", "must be >= 1");
    require(c.R >= 0, "R", "must be >= 0");
    require(c.theta >= 0 && c.theta <= 1, "theta", "must lie in [0, 1]");
    require(!c.theta_grid.empty(), "theta_grid", "must not be empty");
    for (std::size_t i = 0; i < c.theta_grid.size(); ++i) {
        require(c.theta_grid[i] >= 0 && c.theta_grid[i] <= 1, "theta_grid", "values must lie in [0, 1]");
        require(i == 0 || c.theta_grid[i] > c.theta_grid[i - 1], "theta_grid", "must be strictly increasing");
    }
    const bool uses_alpha =
        c.policy.kind == PolicyKind::dirichlet || c.policy.kind == PolicyKind::dirichlet_shared;
    require(!uses_alpha || c.policy.alpha > 0, "alpha", "must be > 0");
    for (std::size_t i = 0; i < c.alpha_grid.size(); ++i) {
        require(c.alpha_grid[i] > 0, "alpha_grid", "values must be > 0");
        require(i == 0 || c.alpha_grid[i] > c.alpha_grid[i - 1], "alpha_grid", "must be strictly increasing");
    }
    for (std::size_t i = 0; i < c.K_grid.size(); ++i) {
        require(c.K_grid[i] >= 1, "K_grid", "values must be >= 1");
        require(i == 0 || c.K_grid[i] > c.K_grid[i - 1], "K_grid", "must be strictly increasing");
    }
    require(c.n_mode == "fixed_per_client" || c.n_mode == "fixed_total", "n_mode",
            "must be fixed_per_client or fixed_total");
    require(c.replicates >= 1, "replicates", "must be >= 1");
    require(c.n_test >= 0, "n_test", "must be >= 0");
    require(c.snapshot_every >= 1, "snapshot_every", "must be >= 1");
    require(c.divergence_bound > 0, "divergence_bound", "must be > 0");
    require(c.minibatch >= 0, "minibatch", "must be >= 0");
}

RunConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("", "config must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (!kKnown.count(key)) throw ConfigError(key, "unknown key");
    for (const auto& key : kRequired)
        if (!j.contains(key)) throw ConfigError(key, "missing required field");

    RunConfig c;
    c.K = get<int>(j, "K");
    c.S = get<int>(j, "S");
    c.L = get<int>(j, "L");
    c.m_p = get<int>(j, "m_p");
    c.n_k = get<int>(j, "n_k");
    c.sigma_p = get<double>(j, "sigma_p");
    opt(j, "norm_global", c.norm_global);
    opt(j, "norm_local", c.norm_local);
    opt(j, "norm_noise", c.norm_noise);
    if (j.contains("sigma_0")) c.sigma_0 = get<double>(j, "sigma_0");
    if (j.contains("class_prompt_mode")) {
        try {
            c.class_mode = class_mode_from_string(get<std::string>(j, "class_prompt_mode"));
        } catch (const InvalidArgument& e) {
            throw ConfigError("class_prompt_mode", e.what());
        }
    }
    opt(j, "class_prompt_scale", c.class_scale);
    if (j.contains("eta")) {
        if (j["eta"].is_string()) {
            require(j["eta"].get<std::string>() == "auto", "eta", "must be a number or \"auto\"");
            c.eta.reset();
        } else {
            c.eta = get<double>(j, "eta");
        }
    }
    opt(j, "eta_start", c.eta_start);
    opt(j, "E", c.E);
    opt(j, "R", c.R);
    opt(j, "theta", c.theta);
    opt(j, "theta_grid", c.theta_grid);
    if (j.contains("policy")) {
        try {
            c.policy.kind = policy_from_string(get<std::string>(j, "policy"));
        } catch (const InvalidArgument& e) {
            throw ConfigError("policy", e.what());
        }
    }
    opt(j, "alpha", c.policy.alpha);
    opt(j, "alpha_grid", c.alpha_grid);
    opt(j, "K_grid", c.K_grid);
    opt(j, "n_mode", c.n_mode);
    opt(j, "seed", c.seed);
    opt(j, "replicates", c.replicates);
    if (j.contains("loss_mode")) {
        try {
            c.loss_mode = loss_mode_from_string(get<std::string>(j, "loss_mode"));
        } catch (const InvalidArgument& e) {
            throw ConfigError("loss_mode", e.what());
        }
    }
    opt(j, "n_test", c.n_test);
    if (j.contains("label_scheme")) {
        const auto s = get<std::string>(j, "label_scheme");
        require(s == "balanced" || s == "random", "label_scheme", "must be balanced or random");
        c.labels = s == "balanced" ? LabelScheme::balanced : LabelScheme::random;
    }
    opt(j, "snapshot_every", c.snapshot_every);
    opt(j, "divergence_bound", c.divergence_bound);
    opt(j, "minibatch", c.minibatch);
    validate(c);
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1;
        for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()); ++i) line += text[i] == '\n';
        throw ConfigError("", path + ":" + std::to_string(line) + ": JSON parse error: " + e.what());
    }
    return config_from_json(j);
}

json to_json(const RunConfig& c) {
    json j;
    j["K"] = c.K;
    j["S"] = c.S;
    j["L"] = c.L;
    j["m_p"] = c.m_p;
    j["n_k"] = c.n_k;
    j["norm_global"] = c.norm_global;
    j["norm_local"] = c.norm_local;
    j["norm_noise"] = c.norm_noise;
    j["sigma_p"] = c.sigma_p;
    j["sigma_0"] = c.sigma0();
    j["class_prompt_mode"] = to_string(c.class_mode);
    j["class_prompt_scale"] = c.class_scale;
    j["eta"] = c.eta ? json(*c.eta) : json("auto");
    j["eta_start"] = c.eta_start;
    j["E"] = c.E;
    j["R"] = c.R;
    j["theta"] = c.theta;
    j["theta_grid"] = c.theta_grid;
    j["policy"] = to_string(c.policy.kind);
    j["alpha"] = c.policy.alpha;
    j["alpha_grid"] = c.alpha_grid;
    j["K_grid"] = c.K_grid;
    j["n_mode"] = c.n_mode;
    j["seed"] = c.seed;
    j["replicates"] = c.replicates;
    j["loss_mode"] = to_string(c.loss_mode);
    j["n_test"] = c.n_test;
    j["label_scheme"] = c.labels == LabelScheme::balanced ? "balanced" : "random";
    j["snapshot_every"] = c.snapshot_every;
    j["divergence_bound"] = c.divergence_bound;
    j["minibatch"] = c.minibatch;
    return j;
}

std::string hash_hex(const std::string& text) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
    return buf;
}

std::string config_hash(const RunConfig& c) { return hash_hex(to_json(c).dump()); }

}  // namespace promptfolio
