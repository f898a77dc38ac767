#include "promptfolio/feature_space.hpp"

#include <cmath>
#include <string>

#include "promptfolio/data_model.hpp"
#include "promptfolio/errors.hpp"
#include "promptfolio/rng.hpp"

namespace promptfolio {

double FeatureBank::requested_norm(int r) const {
    if (r == 0) return norms.global;
    if (r <= S) return norms.local;
    return norms.noise;
}

FeatureBank build_feature_bank(int S, int L, int m_p, const NormSpec& norms, std::uint64_t seed) {
    if (S < 1 || L < 0) throw InvalidArgument("build_feature_bank: need S >= 1 and L >= 0");
    const int m = 1 + S + L;
    if (m_p < m)
        throw DimensionError("build_feature_bank: m_p = " + std::to_string(m_p) + " < 1+S+L = " +
                             std::to_string(m));
    for (double v : {norms.global, norms.local, norms.noise})
        if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument("build_feature_bank: norms must be positive");

    FeatureBank bank;
    bank.S = S;
    bank.L = L;
    bank.m_p = m_p;
    bank.norms = norms;
    bank.seed = seed;
    bank.rows = Mat(static_cast<std::size_t>(m), static_cast<std::size_t>(m_p));

    Engine eng = make_engine(seed, "bank");
    std::normal_distribution<double> nd(0.0, 1.0);
    for (double& x : bank.rows.data) x = nd(eng);

    // Modified Gram-Schmidt, two passes so off-diagonal residue sits at rounding level.
    for (std::size_t i = 0; i < bank.rows.rows; ++i) {
        auto ri = bank.rows.row(i);
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t j = 0; j < i; ++j) {
                auto rj = bank.rows.row(j);
                const double c = dot(ri, rj) / dot(rj, rj);
                axpy(-c, rj, ri);
            }
        }
        const double nrm = norm(ri);
        if (!(nrm > 0.0)) throw DegenerateError("build_feature_bank: rank-deficient draw");
        for (double& x : ri) x /= nrm;
    }
    for (std::size_t i = 0; i < bank.rows.rows; ++i) {
        const double target = bank.requested_norm(static_cast<int>(i));
        for (double& x : bank.rows.row(i)) x *= target;
    }
    return bank;
}

EncoderWeights assemble_W(const FeatureBank& bank) { return EncoderWeights{bank.rows}; }

double snr(const FeatureBank& bank, double sigma_p, int which) {
    if (!(sigma_p > 0.0)) throw InvalidArgument("snr: sigma_p must be positive");
    if (which < 0 || which > bank.S) throw InvalidArgument("snr: feature index out of range");
    return norm(bank.rows.row(static_cast<std::size_t>(which))) / (sigma_p * std::sqrt(double(bank.m())));
}

double chi(const ClientAssignment& a, const FeatureBank& bank, int k) {
    if (k < 0 || k >= a.K) throw InvalidArgument("chi: unknown client " + std::to_string(k));
    if (a.S != bank.S) throw DimensionError("chi: assignment and bank disagree on S");
    // mu_k = sum_s pi_k(s) nu_s, so <mu_k, mu_k'> = sum_{s,s'} pi_k(s) pi_k'(s') <nu_s, nu_s'>
    auto inner = [&](int i, int j) {
        double acc = 0.0;
        for (int s = 0; s < a.S; ++s) {
            for (int t = 0; t < a.S; ++t) {
                const double w = a.pi[i][s] * a.pi[j][t];
                if (w == 0.0) continue;
                acc += w * dot(bank.nu(s + 1), bank.nu(t + 1));
            }
        }
        return acc;
    };
    const double self = inner(k, k);
    double total = 0.0;
    for (int j = 0; j < a.K; ++j) total += inner(k, j);
    return total / self;
}

nlohmann::json to_json(const FeatureBank& bank) {
    nlohmann::json j;
    j["S"] = bank.S;
    j["L"] = bank.L;
    j["m_p"] = bank.m_p;
    j["seed"] = bank.seed;
    j["norms"] = {{"global", bank.norms.global}, {"local", bank.norms.local}, {"noise", bank.norms.noise}};
    j["rows"] = nlohmann::json::array();
    for (std::size_t i = 0; i < bank.rows.rows; ++i) {
        auto r = bank.rows.row(i);
        j["rows"].push_back(std::vector<double>(r.begin(), r.end()));
    }
    return j;
}

FeatureBank bank_from_json(const nlohmann::json& j) {
    FeatureBank bank;
    bank.S = j.at("S").get<int>();
    bank.L = j.at("L").get<int>();
    bank.m_p = j.at("m_p").get<int>();
    bank.seed = j.at("seed").get<std::uint64_t>();
    bank.norms.global = j.at("norms").at("global").get<double>();
    bank.norms.local = j.at("norms").at("local").get<double>();
    bank.norms.noise = j.at("norms").at("noise").get<double>();
    const auto& rows = j.at("rows");
    if (static_cast<int>(rows.size()) != bank.m()) throw DimensionError("bank_from_json: row count");
    bank.rows = Mat(rows.size(), static_cast<std::size_t>(bank.m_p));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto v = rows[i].get<std::vector<double>>();
        if (static_cast<int>(v.size()) != bank.m_p) throw DimensionError("bank_from_json: row length");
        std::copy(v.begin(), v.end(), bank.rows.row(i).begin());
    }
    return bank;
}

}  // namespace promptfolio
