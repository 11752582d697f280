#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dla/backbone.hpp"
#include "dla/dataset.hpp"

namespace dla {

// Multi-step decay: lr = base * gamma^(milestones passed).
struct Schedule {
    double base_lr = 0.1;
    std::vector<int> milestones = {15, 25};
    double gamma = 0.1;

    void validate() const;
    double lr_at_epoch(int epoch) const;
};

struct TrainOptions {
    int epochs = 30;
    int batch = 64;
    Schedule schedule;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    bool augment = true;
    int augment_pad = 2;
    uint64_t seed = 1;
};

// Classical momentum with coupled weight decay:
//   v <- mu*v + g + wd*p;  p <- p - lr*v
class SgdOptimizer {
public:
    SgdOptimizer(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

    // Applies one step to every trainable entry. A non-finite gradient
    // raises NumericError before any parameter is touched.
    void step(std::vector<ParamInfo>& params, double lr);
    void zero_grad(std::vector<ParamInfo>& params);

private:
    double momentum_, weight_decay_;
    std::vector<std::vector<double>> velocity_;
};

struct Metrics {
    double loss = 0.0;
    double accuracy = 0.0;
};

struct AugmentConfig {
    bool enabled = false;
    int pad = 2;
};

// Assembles normalized input [count, C, H, W] for the given sample indices;
// augmentation draws (crop offset, flip) per sample from `rng`.
Tensor make_batch(const Dataset& data, const std::vector<int>& indices, const AugmentConfig& aug,
                  Rng* rng);
std::vector<int> batch_labels(const Dataset& data, const std::vector<int>& indices);

Metrics train_epoch(Network& net, const Dataset& data, SgdOptimizer& opt, double lr, int batch,
                    const AugmentConfig& aug, Rng& order_rng);
Metrics evaluate(Network& net, const Dataset& data, int batch);

struct EpochLog {
    int epoch;
    double lr;
    Metrics train, test;
};

struct RunResult {
    uint64_t seed;
    std::vector<EpochLog> epochs;
    Metrics final_test;
};

std::string format_epoch_log(const EpochLog& log);
constexpr const char* kEpochLogHeader = "epoch,lr,train_loss,train_acc,test_loss,test_acc";

struct ExperimentConfig {
    NetworkConfig net;
    TrainOptions train;
    std::string data_path;
    std::string test_data_path;
};

// One seeded run; optionally writes the per-epoch metrics log and a
// checkpoint (plus a key=value sidecar describing the network).
RunResult run_training(const ExperimentConfig& cfg, uint64_t seed,
                       const std::optional<std::string>& log_path,
                       const std::optional<std::string>& checkpoint_path);

struct SeedSummary {
    std::vector<RunResult> runs;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
    // Table row in "Accuracy+-Std" style, accuracies in percent.
    std::string table_row(const std::string& model_name) const;
};

SeedSummary run_seeds(const ExperimentConfig& cfg, int n_seeds,
                      const std::optional<std::string>& log_path,
                      const std::optional<std::string>& checkpoint_path, bool parallel = true);

// Inserts "_seed<k>" before the extension: runs/m.csv -> runs/m_seed3.csv.
std::string seed_suffixed_path(const std::string& path, uint64_t seed);

}  // namespace dla
