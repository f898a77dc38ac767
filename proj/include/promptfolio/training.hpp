#pragma once

#include <functional>
#include <span>
#include <vector>

#include "promptfolio/data_model.hpp"
#include "promptfolio/decomposition.hpp"
#include "promptfolio/encoders.hpp"
#include "promptfolio/feature_space.hpp"
#include "promptfolio/linalg.hpp"

namespace promptfolio {

// margin: l(z) = log(1 + e^-z) on z = y (sim_+ - sim_-).
// paper_similarity: -log(1 + e^{sim}) on the sample's own class feature, kept for comparison.
enum class LossMode { margin, paper_similarity };

std::string to_string(LossMode mode);
LossMode loss_mode_from_string(const std::string& s);

double loss(double z);
double loss_slope(double z);  // 1/(1+e^z), the magnitude of dl/dz

struct PromptGrads {
    Vec g_G;
    Vec g_L;
    double loss = 0.0;
};

PromptGrads grad_prompts(const ClientDataset& batch, const EncoderWeights& enc, std::span<const double> p_G,
                         std::span<const double> p_L, double theta, const ClassPrompts& cp,
                         LossMode mode = LossMode::margin);

double batch_loss(const ClientDataset& batch, const EncoderWeights& enc, std::span<const double> p_G,
                  std::span<const double> p_L, double theta, const ClassPrompts& cp, LossMode mode = LossMode::margin);

// Everything a run reads but never writes.
struct Problem {
    FeatureBank bank;
    EncoderWeights enc;
    ClassPrompts cp;
    ClientAssignment assignment;
    std::vector<ClientDataset> train;
    Vec p0;

    std::vector<double> weights() const;
};

struct TrainConfig {
    double eta = 4e-4;
    int E = 5;
    int R = 50;
    double theta = 0.5;
    LossMode loss_mode = LossMode::margin;
    double divergence_bound = 1e6;
    int snapshot_every = 1;
    int minibatch = 0;  // 0 means full batch
    int jobs = 1;
    bool track = true;  // trajectories and psi/phi accumulators
};

struct FederationState {
    Vec server_global;
    std::vector<Vec> client_global;
    std::vector<Vec> client_local;
    double theta = 0.0;
    int round = 0;
    double eta = 0.0;
    int E = 0;
    int R = 0;
};

struct PromptSnapshot {
    int round = 0;
    Vec server_global;
    std::vector<Vec> client_local;
};

struct TrainRecord {
    std::vector<double> round_loss;           // pooled, R+1 entries, using the prompts each client evaluates with
    std::vector<Vec> client_loss;             // R+1 x K
    std::vector<double> grad_norm_G;          // per round, mean over clients of the first local step
    std::vector<double> grad_norm_L;
    std::vector<PromptSnapshot> snapshots;
    double eta = 0.0;
    bool eta_auto = false;
};

struct RunResult {
    FederationState state;
    TrainRecord record;
    TrajectorySet traj;
};

struct LocalState {
    Vec p_G;
    Vec p_L;
    PsiPhiAccumulator acc_G;
    PsiPhiAccumulator acc_L;
    double first_grad_norm_G = 0.0;
    double first_grad_norm_L = 0.0;
};

// E descent steps on one client's data; throws DivergenceError when a prompt leaves the bound.
void local_update(LocalState& st, const ClientDataset& data, const EncoderWeights& enc, const ClassPrompts& cp,
                  const TrainConfig& cfg, bool track = false, int step_offset = 0);

Vec fedavg(const std::vector<Vec>& prompts, const std::vector<double>& weights);

RunResult run_promptfolio(const Problem& prob, const TrainConfig& cfg);

// Reference runs for the two degenerate mixes: one prompt trained by FedAvg, and clients training alone.
std::vector<Vec> run_fedavg_single(const Problem& prob, const TrainConfig& cfg);
std::vector<std::vector<Vec>> run_isolated(const Problem& prob, const TrainConfig& cfg);

// Halves eta from eta_start until ten single-step rounds give a non-increasing pooled loss.
double search_eta(const Problem& prob, TrainConfig cfg, double eta_start = 1.0, int max_halvings = 40);

void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

}  // namespace promptfolio
