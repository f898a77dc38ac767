#include "promptfolio/data_model.hpp"

#include <algorithm>
#include <cmath>

#include "promptfolio/errors.hpp"
#include "promptfolio/rng.hpp"

namespace promptfolio {

std::string to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::round_robin: return "round_robin";
        case PolicyKind::uniform: return "uniform";
        case PolicyKind::dirichlet_shared: return "dirichlet_shared";
        case PolicyKind::dirichlet: return "dirichlet";
        case PolicyKind::iid: return "iid";
    }
    return "?";
}

PolicyKind policy_from_string(const std::string& s) {
    for (auto k : {PolicyKind::round_robin, PolicyKind::uniform, PolicyKind::dirichlet_shared,
                   PolicyKind::dirichlet, PolicyKind::iid})
        if (to_string(k) == s) return k;
    throw InvalidArgument("unknown assignment policy '" + s + "'");
}

Vec one_hot(int s, int S) {
    Vec v(static_cast<std::size_t>(S), 0.0);
    v[static_cast<std::size_t>(s - 1)] = 1.0;
    return v;
}

namespace {

// Dirichlet(alpha * 1_S) in log space: for alpha around 0.01 the plain gamma draws underflow to zero.
Vec sample_dirichlet(int S, double alpha, Engine& eng) {
    std::gamma_distribution<double> gd(alpha + 1.0, 1.0);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    Vec logw(static_cast<std::size_t>(S));
    for (auto& lw : logw) {
        double u = ud(eng);
        while (u <= 0.0) u = ud(eng);
        lw = std::log(gd(eng)) + std::log(u) / alpha;
    }
    const double mx = *std::max_element(logw.begin(), logw.end());
    double total = 0.0;
    Vec w(logw.size());
    for (std::size_t i = 0; i < w.size(); ++i) total += (w[i] = std::exp(logw[i] - mx));
    for (double& x : w) x /= total;
    return w;
}

int draw_index(const Vec& p, Engine& eng) {
    std::discrete_distribution<int> dd(p.begin(), p.end());
    return dd(eng) + 1;
}

int argmax1(const Vec& p) {
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) + 1;
}

}  // namespace

ClientAssignment assign_clients(int K, int S, const Policy& policy, std::uint64_t seed) {
    if (K < 1 || S < 1) throw InvalidArgument("assign_clients: need K >= 1 and S >= 1");
    const bool uses_alpha = policy.kind == PolicyKind::dirichlet || policy.kind == PolicyKind::dirichlet_shared;
    if (uses_alpha && !(policy.alpha > 0.0)) throw InvalidArgument("assign_clients: alpha must be positive");

    ClientAssignment a;
    a.K = K;
    a.S = S;
    a.policy = policy;
    a.seed = seed;
    Engine eng = make_engine(seed, "assignment");

    switch (policy.kind) {
        case PolicyKind::round_robin:
            for (int k = 0; k < K; ++k) a.s.push_back(k % S + 1);
            break;
        case PolicyKind::uniform: {
            std::uniform_int_distribution<int> ud(1, S);
            for (int k = 0; k < K; ++k) a.s.push_back(ud(eng));
            break;
        }
        case PolicyKind::dirichlet_shared: {
            const Vec P = sample_dirichlet(S, policy.alpha, eng);
            for (int k = 0; k < K; ++k) a.s.push_back(draw_index(P, eng));
            break;
        }
        case PolicyKind::dirichlet:
            for (int k = 0; k < K; ++k) {
                a.pi.push_back(sample_dirichlet(S, policy.alpha, eng));
                a.s.push_back(argmax1(a.pi.back()));
            }
            break;
        case PolicyKind::iid:
            for (int k = 0; k < K; ++k) {
                a.pi.emplace_back(static_cast<std::size_t>(S), 1.0 / S);
                a.s.push_back(1);
            }
            break;
    }
    if (a.pi.empty())
        for (int k = 0; k < K; ++k) a.pi.push_back(one_hot(a.s[k], S));
    return a;
}

ClientAssignment assignment_from_indices(const std::vector<int>& s, int S) {
    ClientAssignment a;
    a.K = static_cast<int>(s.size());
    a.S = S;
    a.s = s;
    for (int v : s) {
        if (v < 1 || v > S) throw InvalidArgument("assignment_from_indices: index out of range");
        a.pi.push_back(one_hot(v, S));
    }
    return a;
}

ClientDataset gen_client_data(int n, const Vec& pi, int S, int L, double sigma_p, std::uint64_t seed,
                              LabelScheme labels, int client) {
    if (n < 0) throw InvalidArgument("gen_client_data: negative sample count");
    if (!(sigma_p >= 0.0) || !std::isfinite(sigma_p)) throw InvalidArgument("gen_client_data: invalid sigma_p");
    if (static_cast<int>(pi.size()) != S) throw DimensionError("gen_client_data: pi has wrong length");

    ClientDataset d;
    d.client = client;
    d.S = S;
    d.L = L;
    d.pi = pi;
    d.g = Mat(static_cast<std::size_t>(n), static_cast<std::size_t>(1 + S + L));

    int fixed = 0;
    for (int s = 0; s < S; ++s)
        if (pi[s] == 1.0) fixed = s + 1;

    Engine eng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    for (int i = 0; i < n; ++i) {
        const int y = labels == LabelScheme::balanced ? (i % 2 == 0 ? 1 : -1) : (coin(eng) ? 1 : -1);
        const int s = fixed ? fixed : draw_index(pi, eng);
        auto row = d.g.row(static_cast<std::size_t>(i));
        row[0] = y;
        row[static_cast<std::size_t>(s)] = y;
        for (int l = 1; l <= L; ++l) row[static_cast<std::size_t>(S + l)] = sigma_p * nd(eng);
        d.y.push_back(y);
        d.s.push_back(s);
    }
    return d;
}

ClientDataset gen_client_data(int n, int s, int S, int L, double sigma_p, std::uint64_t seed, LabelScheme labels,
                              int client) {
    if (s < 1 || s > S) throw InvalidArgument("gen_client_data: local feature index out of range");
    return gen_client_data(n, one_hot(s, S), S, L, sigma_p, seed, labels, client);
}

std::vector<ClientDataset> gen_train_data(const std::vector<int>& n_k, const ClientAssignment& a, int L,
                                          double sigma_p, std::uint64_t master_seed, LabelScheme labels) {
    if (static_cast<int>(n_k.size()) != a.K) throw DimensionError("gen_train_data: n_k length != K");
    std::vector<ClientDataset> out;
    for (int k = 0; k < a.K; ++k) {
        if (n_k[k] < 1) throw InvalidArgument("gen_train_data: n_k must be >= 1");
        out.push_back(gen_client_data(n_k[k], a.pi[k], a.S, L, sigma_p, derive_seed(master_seed, "train", k), labels,
                                      k));
    }
    return out;
}

std::vector<ClientDataset> gen_test_data(int n_test, const ClientAssignment& a, int L, double sigma_p,
                                         std::uint64_t master_seed, LabelScheme labels) {
    std::vector<ClientDataset> out;
    for (int k = 0; k < a.K; ++k)
        out.push_back(
            gen_client_data(n_test, a.pi[k], a.S, L, sigma_p, derive_seed(master_seed, "test", k), labels, k));
    return out;
}

void write_csv(std::ostream& os, const std::vector<ClientDataset>& data) {
    if (data.empty()) return;
    const int m = data.front().m();
    os << "client,y,s";
    for (int j = 0; j < m; ++j) os << ",g" << j;
    os << '\n';
    os.precision(17);
    for (const auto& d : data) {
        for (int i = 0; i < d.n(); ++i) {
            os << d.client << ',' << d.y[i] << ',' << d.s[i];
            for (double v : d.g.row(static_cast<std::size_t>(i))) os << ',' << v;
            os << '\n';
        }
    }
}

}  // namespace promptfolio
