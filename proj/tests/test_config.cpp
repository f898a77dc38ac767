#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "promptfolio/config.hpp"
#include "promptfolio/errors.hpp"
#include "promptfolio/io.hpp"
#include "promptfolio/rng.hpp"

using namespace promptfolio;
using nlohmann::json;

namespace {

json minimal() { return {{"K", 4}, {"S", 4}, {"L", 8}, {"m_p", 16}, {"n_k", 32}, {"sigma_p", 0.5}}; }

std::string field_of(const json& j) {
    try {
        config_from_json(j);
    } catch (const ConfigError& e) {
        return e.field();
    }
    return "";
}

}  // namespace

TEST_CASE("minimal config fills defaults") {
    const RunConfig c = config_from_json(minimal());
    CHECK(c.K == 4);
    CHECK(c.E == default_config().E);
    CHECK(c.sigma0() == doctest::Approx(0.01 / 4.0));
}

TEST_CASE("validation names the field") {
    json j = minimal();
    j.erase("K");
    CHECK(field_of(j) == "K");
    j = minimal();
    j["thetta"] = 0.5;
    CHECK(field_of(j) == "thetta");
    j = minimal();
    j["theta"] = 1.5;
    CHECK(field_of(j) == "theta");
    j = minimal();
    j["m_p"] = 8;  // below 1 + S + L
    CHECK(field_of(j) == "m_p");
    j = minimal();
    j["sigma_p"] = -1.0;
    CHECK(field_of(j) == "sigma_p");
    j = minimal();
    j["K"] = "four";
    CHECK(field_of(j) == "K");
    j = minimal();
    j["policy"] = "sometimes";
    CHECK(field_of(j) == "policy");
}

TEST_CASE("auto eta") {
    json j = minimal();
    j["eta"] = "auto";
    CHECK_FALSE(config_from_json(j).eta.has_value());
    j["eta"] = 0.01;
    CHECK(*config_from_json(j).eta == 0.01);
}

TEST_CASE("canonical json round trips and fixes the hash") {
    json j = minimal();
    j["theta"] = 0.3;
    j["policy"] = "dirichlet";
    j["alpha"] = 0.3;
    const RunConfig c = config_from_json(j);
    const RunConfig d = config_from_json(to_json(c));
    CHECK(to_json(c) == to_json(d));
    CHECK(config_hash(c) == config_hash(d));
    RunConfig e = c;
    e.seed += 1;
    CHECK(config_hash(c) != config_hash(e));
}

TEST_CASE("parse errors carry a line number") {
    const auto path = std::filesystem::temp_directory_path() / "promptfolio_bad.json";
    {
        std::ofstream out(path);
        out << "{\n  \"K\": 4,\n  \"S\": oops\n}\n";
    }
    try {
        load_config(path.string());
        FAIL("expected a parse error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("seed streams are labelled") {
    CHECK(derive_seed(1, "train", 0) == derive_seed(1, "train", 0));
    CHECK(derive_seed(1, "train", 0) != derive_seed(1, "test", 0));
    CHECK(derive_seed(1, "train", 0) != derive_seed(1, "train", 1));
    CHECK(derive_seed(1, "train", 0) != derive_seed(2, "train", 0));
}

TEST_CASE("atomic write and nan sentinel") {
    const auto dir = std::filesystem::temp_directory_path() / "promptfolio_io_test";
    std::filesystem::remove_all(dir);
    atomic_write(dir / "a.json", "{\"x\": 1}");
    CHECK(read_json_if_exists(dir / "a.json")->at("x") == 1);
    CHECK_FALSE(std::filesystem::exists(dir / "a.json.tmp"));
    CHECK_FALSE(read_json_if_exists(dir / "missing.json").has_value());

    json j = {{"a", std::nan("")}, {"b", {1.0, INFINITY}}, {"c", 2.0}};
    CHECK(sanitize_nonfinite(j) == 2);
    CHECK(j["a"] == "nan");
    CHECK(j["c"] == 2.0);
    std::filesystem::remove_all(dir);
}
