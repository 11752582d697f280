#include "dla/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <numeric>
#include <thread>

#include "dla/checkpoint.hpp"
#include "dla/config.hpp"

namespace dla {

void Schedule::validate() const {
    if (base_lr <= 0.0) throw ConfigError("schedule: base lr must be positive");
    if (gamma <= 0.0) throw ConfigError("schedule: gamma must be positive");
    for (size_t i = 1; i < milestones.size(); ++i)
        if (milestones[i] <= milestones[i - 1])
            throw ConfigError("schedule: milestones must be strictly increasing");
}

double Schedule::lr_at_epoch(int epoch) const {
    if (epoch < 0) throw ContractError("schedule: negative epoch");
    int passed = 0;
    for (int m : milestones)
        if (m <= epoch) ++passed;
    return base_lr * std::pow(gamma, passed);
}

void SgdOptimizer::step(std::vector<ParamInfo>& params, double lr) {
    if (velocity_.empty()) {
        velocity_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i)
            if (params[i].trainable)
                velocity_[i].assign(params[i].tensor.data().size(), 0.0);
    }
    if (velocity_.size() != params.size())
        throw ContractError("optimizer: parameter registry changed size");

    for (const ParamInfo& p : params) {
        if (!p.trainable || !p.tensor.has_grad()) continue;
        double probe = 0.0;
        for (double g : p.tensor.node()->grad) probe += std::fabs(g);
        if (!std::isfinite(probe))
            throw NumericError("optimizer: non-finite gradient in '" + p.name + "', step aborted");
    }

    static const std::vector<double> kNoGrad;
    for (size_t i = 0; i < params.size(); ++i) {
        ParamInfo& p = params[i];
        if (!p.trainable) continue;
        std::vector<double>& v = velocity_[i];
        std::vector<double>& w = p.tensor.data();
        const std::vector<double>& g = p.tensor.has_grad() ? p.tensor.node()->grad : kNoGrad;
        for (size_t j = 0; j < w.size(); ++j) {
            const double gj = g.empty() ? 0.0 : g[j];
            v[j] = momentum_ * v[j] + gj + weight_decay_ * w[j];
            w[j] -= lr * v[j];
        }
    }
}

void SgdOptimizer::zero_grad(std::vector<ParamInfo>& params) {
    for (ParamInfo& p : params) p.tensor.zero_grad();
}

Tensor make_batch(const Dataset& data, const std::vector<int>& indices, const AugmentConfig& aug,
                  Rng* rng) {
    const int channels = data.channels, height = data.height, width = data.width;
    const long plane = static_cast<long>(height) * width;
    std::vector<double> out(indices.size() * static_cast<size_t>(channels) * plane);
    for (size_t n = 0; n < indices.size(); ++n) {
        const uint8_t* img = data.image(indices[n]);
        int dy = 0, dx = 0;
        bool flip = false;
        if (aug.enabled) {
            dy = static_cast<int>(rng->integer(static_cast<uint64_t>(2 * aug.pad + 1))) - aug.pad;
            dx = static_cast<int>(rng->integer(static_cast<uint64_t>(2 * aug.pad + 1))) - aug.pad;
            flip = rng->coin();
        }
        for (int c = 0; c < channels; ++c) {
            const uint8_t* src = img + static_cast<long>(c) * plane;
            double* dst = out.data() + (n * channels + c) * plane;
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x) {
                    const int sx0 = flip ? width - 1 - x : x;
                    const int sy = y + dy, sx = sx0 + dx;
                    double v = 0.0;  // zero padding outside the crop window
                    if (sy >= 0 && sy < height && sx >= 0 && sx < width)
                        v = src[static_cast<long>(sy) * width + sx];
                    dst[static_cast<long>(y) * width + x] = v / 127.5 - 1.0;
                }
        }
    }
    return Tensor::from_data({static_cast<int>(indices.size()), channels, height, width},
                             std::move(out));
}

std::vector<int> batch_labels(const Dataset& data, const std::vector<int>& indices) {
    std::vector<int> labels(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) labels[i] = data.labels[static_cast<size_t>(indices[i])];
    return labels;
}

namespace {

int count_correct(const Tensor& logits, const std::vector<int>& labels) {
    const int batch = logits.dim(0), classes = logits.dim(1);
    int correct = 0;
    for (int b = 0; b < batch; ++b) {
        const double* row = logits.data().data() + static_cast<size_t>(b) * classes;
        int best = 0;
        for (int k = 1; k < classes; ++k)
            if (row[k] > row[best]) best = k;
        if (best == labels[static_cast<size_t>(b)]) ++correct;
    }
    return correct;
}

}  // namespace

Metrics train_epoch(Network& net, const Dataset& data, SgdOptimizer& opt, double lr, int batch,
                    const AugmentConfig& aug, Rng& order_rng) {
    if (data.count() == 0) throw ConfigError("train_epoch: empty dataset");
    std::vector<int> order(static_cast<size_t>(data.count()));
    std::iota(order.begin(), order.end(), 0);
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[order_rng.integer(i)]);

    double loss_sum = 0.0;
    long correct = 0;
    for (int begin = 0; begin < data.count(); begin += batch) {
        const int end = std::min(begin + batch, data.count());
        std::vector<int> indices(order.begin() + begin, order.begin() + end);
        Tensor input = make_batch(data, indices, aug, &order_rng);
        std::vector<int> labels = batch_labels(data, indices);
        opt.zero_grad(net.params());
        Tensor logits = net.forward(input, /*training=*/true);
        Tensor loss = cross_entropy_mean(logits, labels);
        backward(loss);
        opt.step(net.params(), lr);
        loss_sum += loss.item() * static_cast<double>(indices.size());
        correct += count_correct(logits, labels);
    }
    return {loss_sum / data.count(), static_cast<double>(correct) / data.count()};
}

Metrics evaluate(Network& net, const Dataset& data, int batch) {
    if (data.count() == 0) throw ConfigError("evaluate: empty dataset");
    NoGradGuard no_grad;
    double loss_sum = 0.0;
    long correct = 0;
    for (int begin = 0; begin < data.count(); begin += batch) {
        const int end = std::min(begin + batch, data.count());
        std::vector<int> indices(static_cast<size_t>(end - begin));
        std::iota(indices.begin(), indices.end(), begin);
        Tensor input = make_batch(data, indices, {}, nullptr);
        std::vector<int> labels = batch_labels(data, indices);
        Tensor logits = net.forward(input, /*training=*/false);
        Tensor loss = cross_entropy_mean(logits, labels);
        loss_sum += loss.item() * static_cast<double>(indices.size());
        correct += count_correct(logits, labels);
    }
    return {loss_sum / data.count(), static_cast<double>(correct) / data.count()};
}

std::string format_epoch_log(const EpochLog& log) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f", log.epoch, log.lr,
                  log.train.loss, log.train.accuracy, log.test.loss, log.test.accuracy);
    return buf;
}

RunResult run_training(const ExperimentConfig& cfg, uint64_t seed,
                       const std::optional<std::string>& log_path,
                       const std::optional<std::string>& checkpoint_path) {
    cfg.train.schedule.validate();
    NetworkConfig net_cfg = cfg.net;
    net_cfg.seed = seed;
    Network net(net_cfg);
    Dataset train_data = load_dataset(cfg.data_path);
    Dataset test_data = load_dataset(cfg.test_data_path);

    SgdOptimizer opt(cfg.train.momentum, cfg.train.weight_decay);
    Rng order_rng(seed ^ 0x9E3779B97F4A7C15ull);
    AugmentConfig aug{cfg.train.augment, cfg.train.augment_pad};

    RunResult result;
    result.seed = seed;
    std::ofstream log;
    if (log_path) {
        log.open(*log_path);
        if (!log) throw ConfigError("cannot open log path '" + *log_path + "'");
        log << kEpochLogHeader << '\n';
    }
    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        const double lr = cfg.train.schedule.lr_at_epoch(epoch);
        EpochLog entry;
        entry.epoch = epoch;
        entry.lr = lr;
        entry.train = train_epoch(net, train_data, opt, lr, cfg.train.batch, aug, order_rng);
        entry.test = evaluate(net, test_data, cfg.train.batch);
        if (log_path) log << format_epoch_log(entry) << '\n';
        result.epochs.push_back(entry);
    }
    result.final_test = result.epochs.empty() ? evaluate(net, test_data, cfg.train.batch)
                                              : result.epochs.back().test;
    if (checkpoint_path) {
        save_checkpoint(*checkpoint_path, net.params());
        write_network_sidecar(*checkpoint_path + ".cfg", net_cfg);
    }
    return result;
}

std::string seed_suffixed_path(const std::string& path, uint64_t seed) {
    const size_t slash = path.find_last_of('/');
    const size_t dot = path.find_last_of('.');
    const std::string tag = "_seed" + std::to_string(seed);
    if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
        return path + tag;
    return path.substr(0, dot) + tag + path.substr(dot);
}

std::string SeedSummary::table_row(const std::string& model_name) const {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s,%zu,%.2f%%±%.2f", model_name.c_str(), runs.size(),
                  mean_accuracy * 100.0, std_accuracy * 100.0);
    return buf;
}

SeedSummary run_seeds(const ExperimentConfig& cfg, int n_seeds,
                      const std::optional<std::string>& log_path,
                      const std::optional<std::string>& checkpoint_path, bool parallel) {
    if (n_seeds < 1) throw ConfigError("run_seeds: need at least one seed");
    SeedSummary summary;
    summary.runs.resize(static_cast<size_t>(n_seeds));

    auto one = [&](int k) {
        const uint64_t seed = cfg.train.seed + static_cast<uint64_t>(k);
        std::optional<std::string> log =
            log_path ? std::optional(seed_suffixed_path(*log_path, seed)) : std::nullopt;
        std::optional<std::string> ckpt =
            checkpoint_path ? std::optional(seed_suffixed_path(*checkpoint_path, seed)) : std::nullopt;
        summary.runs[static_cast<size_t>(k)] = run_training(cfg, seed, log, ckpt);
    };

    if (parallel && n_seeds > 1) {
        const int workers =
            std::min<int>(n_seeds, std::max(1u, std::thread::hardware_concurrency()));
        std::vector<std::future<void>> futures;
        int next = 0;
        while (next < n_seeds || !futures.empty()) {
            while (next < n_seeds && static_cast<int>(futures.size()) < workers)
                futures.push_back(std::async(std::launch::async, one, next++));
            futures.front().get();
            futures.erase(futures.begin());
        }
    } else {
        for (int k = 0; k < n_seeds; ++k) one(k);
    }

    double mean = 0.0;
    for (const RunResult& r : summary.runs) mean += r.final_test.accuracy;
    mean /= static_cast<double>(n_seeds);
    double var = 0.0;
    for (const RunResult& r : summary.runs) {
        const double d = r.final_test.accuracy - mean;
        var += d * d;
    }
    summary.mean_accuracy = mean;
    summary.std_accuracy = n_seeds > 1 ? std::sqrt(var / (n_seeds - 1)) : 0.0;
    return summary;
}

}  // namespace dla
