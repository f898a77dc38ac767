#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "promptfolio/linalg.hpp"

namespace promptfolio {

// round_robin/uniform/dirichlet_shared give every client one local feature.
// dirichlet/iid give every client a distribution over features; each sample draws from it.
enum class PolicyKind { round_robin, uniform, dirichlet_shared, dirichlet, iid };

struct Policy {
    PolicyKind kind = PolicyKind::round_robin;
    double alpha = 1.0;
};

std::string to_string(PolicyKind kind);
PolicyKind policy_from_string(const std::string& s);

struct ClientAssignment {
    int K = 0;
    int S = 0;
    Policy policy;
    std::uint64_t seed = 0;
    std::vector<int> s;    // per client, 1-based; the most likely feature for mixture clients
    std::vector<Vec> pi;   // per client distribution over [1, S] (index 0 is nu_1)

    bool mixture() const {
        return policy.kind == PolicyKind::dirichlet || policy.kind == PolicyKind::iid;
    }
};

ClientAssignment assign_clients(int K, int S, const Policy& policy, std::uint64_t seed);

// Builds an assignment from explicit 1-based indices.
ClientAssignment assignment_from_indices(const std::vector<int>& s, int S);

enum class LabelScheme { balanced, random };

struct ClientDataset {
    int client = 0;
    int S = 0;
    int L = 0;
    Mat g;                 // n x (1+S+L)
    std::vector<int> y;    // +1 / -1
    std::vector<int> s;    // per-sample local feature, 1-based
    Vec pi;

    int n() const { return static_cast<int>(y.size()); }
    int m() const { return 1 + S + L; }
};

// Samples with the client's local feature drawn from pi (one-hot pi means a fixed feature).
ClientDataset gen_client_data(int n, const Vec& pi, int S, int L, double sigma_p, std::uint64_t seed,
                              LabelScheme labels = LabelScheme::balanced, int client = 0);
ClientDataset gen_client_data(int n, int s, int S, int L, double sigma_p, std::uint64_t seed,
                              LabelScheme labels = LabelScheme::balanced, int client = 0);

std::vector<ClientDataset> gen_train_data(const std::vector<int>& n_k, const ClientAssignment& a, int L,
                                          double sigma_p, std::uint64_t master_seed,
                                          LabelScheme labels = LabelScheme::balanced);

// Fresh draws from the same per-client distributions on a separate seed stream.
std::vector<ClientDataset> gen_test_data(int n_test, const ClientAssignment& a, int L, double sigma_p,
                                         std::uint64_t master_seed, LabelScheme labels = LabelScheme::balanced);

void write_csv(std::ostream& os, const std::vector<ClientDataset>& data);

Vec one_hot(int s, int S);

}  // namespace promptfolio
