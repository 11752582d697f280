#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>

#include "dla/checkpoint.hpp"
#include "dla/config.hpp"
#include "dla/verify.hpp"

namespace {

using namespace dla;

int cmd_gen_data(const std::string& spec_path, const std::string& out_stem, long seed_override) {
    DatasetSpec spec = parse_dataset_spec(spec_path);
    if (seed_override >= 0) spec.seed = static_cast<uint64_t>(seed_override);
    auto [train, test] = generate_synthetic(spec);
    const std::string train_path = out_stem + "_train.dlad";
    const std::string test_path = out_stem + "_test.dlad";
    save_dataset(train_path, train);
    save_dataset(test_path, test);
    std::printf("wrote %s (%d samples) and %s (%d samples)\n", train_path.c_str(), train.count(),
                test_path.c_str(), test.count());
    return 0;
}

int cmd_train(const std::string& config_path, int seeds, const std::string& log_path,
              const std::string& checkpoint_path, bool parallel, long seed_override) {
    ExperimentConfig cfg = parse_experiment_config(config_path);
    if (seed_override >= 0) {
        cfg.net.seed = static_cast<uint64_t>(seed_override);
        cfg.train.seed = cfg.net.seed;
    }
    if (cfg.data_path.empty() || cfg.test_data_path.empty())
        throw ConfigError(config_path + ": fields 'data' and 'test_data' are required for training");
    const auto log = log_path.empty() ? std::nullopt : std::optional(log_path);
    const auto ckpt = checkpoint_path.empty() ? std::nullopt : std::optional(checkpoint_path);
    SeedSummary summary = run_seeds(cfg, seeds, log, ckpt, parallel);

    std::string model = variant_name(cfg.net.variant);
    if (variant_is_dynamic(cfg.net.variant))
        model += std::string("(") + cell_kind_name(cfg.net.cell) + "," +
                 activation_name(cfg.net.state_norm) + ")";
    std::printf("model,seeds,top1\n%s\n", summary.table_row(model).c_str());
    for (const RunResult& run : summary.runs)
        std::printf("seed %llu: top1=%.4f loss=%.4f\n",
                    static_cast<unsigned long long>(run.seed), run.final_test.accuracy,
                    run.final_test.loss);
    return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& config_path, int batch) {
    const std::string sidecar = config_path.empty() ? checkpoint_path + ".cfg" : config_path;
    NetworkConfig net_cfg = read_network_sidecar(sidecar);
    Network net(net_cfg);
    load_checkpoint(checkpoint_path, net.params());
    Dataset data = load_dataset(data_path);
    Metrics m = evaluate(net, data, batch);
    std::printf("samples=%d loss=%.6f top1=%.6f\n", data.count(), m.loss, m.accuracy);
    return 0;
}

int cmd_param_count(const std::string& config_path) {
    ExperimentConfig cfg = parse_experiment_config(config_path);
    Network net(cfg.net);
    ParamLedger ledger = param_count_oracle(net);
    std::fputs(ledger.to_text().c_str(), stdout);
    if (variant_is_dynamic(cfg.net.variant)) {
        for (int s = 0; s < net.stage_count(); ++s) {
            const CellParams& cell = net.stage_attention(s).cell();
            std::printf("cell_weight_count,stage%d,%s,C=%d,r=%d,%ld\n", s + 1,
                        cell_kind_name(cell.kind), cell.channels, cell.reduction,
                        param_count(cell, false));
        }
    }
    return 0;
}

int cmd_gradcheck(const std::string& config_path, double tol, double step, int coords, long seed) {
    ExperimentConfig cfg = parse_experiment_config(config_path);
    Network net(cfg.net);
    Rng rng(seed >= 0 ? static_cast<uint64_t>(seed) : cfg.net.seed + 17);
    Tensor input = init_normal(rng, {2, cfg.net.in_channels, cfg.net.height, cfg.net.width}, 0.0,
                               1.0, false);
    std::vector<int> labels;
    for (int b = 0; b < 2; ++b)
        labels.push_back(static_cast<int>(rng.integer(static_cast<uint64_t>(cfg.net.classes))));

    std::vector<NamedTensor> leaves;
    for (const ParamInfo& p : net.params())
        if (p.trainable) leaves.emplace_back(p.name, p.tensor);
    auto loss_fn = [&]() {
        return cross_entropy_mean(net.forward(input, /*training=*/true), labels);
    };
    GradCheckReport report = finite_diff_gradcheck(loss_fn, leaves, step, coords,
                                                   seed >= 0 ? static_cast<uint64_t>(seed) : 3);
    std::printf("coords=%ld max_rel_error=%.3e worst=%s[%ld] analytic=%.6e numeric=%.6e\n",
                report.coords_checked, report.max_rel_error, report.worst_tensor.c_str(),
                report.worst_index, report.analytic, report.numeric);
    if (report.max_rel_error <= tol) {
        std::printf("gradcheck PASS (tol %.1e)\n", tol);
        return 0;
    }
    std::printf("gradcheck FAIL (tol %.1e)\n", tol);
    return 1;
}

int cmd_dump_attention(const std::string& checkpoint_path, const std::string& data_path,
                       const std::string& out_dir, const std::string& config_path, int batch) {
    const std::string sidecar = config_path.empty() ? checkpoint_path + ".cfg" : config_path;
    NetworkConfig net_cfg = read_network_sidecar(sidecar);
    if (net_cfg.variant == Variant::None)
        throw ConfigError("dump-attention: checkpoint was trained without layer attention");
    Network net(net_cfg);
    load_checkpoint(checkpoint_path, net.params());
    Dataset data = load_dataset(data_path);

    // weights averaged over heads (inside the record) and over all samples
    std::map<std::pair<int, int>, std::vector<double>> sums;
    std::map<std::pair<int, int>, long> counts;
    NoGradGuard no_grad;
    for (int begin = 0; begin < data.count(); begin += batch) {
        const int end = std::min(begin + batch, data.count());
        std::vector<int> indices(static_cast<size_t>(end - begin));
        std::iota(indices.begin(), indices.end(), begin);
        Tensor input = make_batch(data, indices, {}, nullptr);
        std::vector<AttentionRecord> records;
        net.forward(input, /*training=*/false, &records);
        for (const AttentionRecord& r : records) {
            auto key = std::make_pair(r.stage, r.query_layer);
            auto& slot = sums[key];
            if (slot.empty()) slot.assign(r.weights.size(), 0.0);
            for (size_t i = 0; i < r.weights.size(); ++i)
                slot[i] += r.weights[i] * static_cast<double>(indices.size());
            counts[key] += static_cast<long>(indices.size());
        }
    }

    std::filesystem::create_directories(out_dir);
    const int depth = net_cfg.blocks_per_stage;
    for (int s = 1; s <= net.stage_count(); ++s) {
        const std::string path = out_dir + "/stage" + std::to_string(s) + ".csv";
        std::ofstream out(path);
        if (!out) throw ConfigError("cannot write '" + path + "'");
        out << "query_layer";
        for (int k = 1; k <= depth; ++k) out << ",key_" << k;
        out << '\n';
        for (int l = 1; l <= depth; ++l) {
            out << l;
            const auto it = sums.find({s, l});
            if (it == sums.end()) throw ContractError("dump-attention: missing record for stage " +
                                                      std::to_string(s) + " layer " + std::to_string(l));
            char buf[32];
            for (size_t i = 0; i < it->second.size(); ++i) {
                std::snprintf(buf, sizeof(buf), ",%.9f", it->second[i] / counts[{s, l}]);
                out << buf;
            }
            for (int k = static_cast<int>(it->second.size()); k < depth; ++k) out << ',';
            out << '\n';
        }
        std::printf("wrote %s\n", path.c_str());
    }
    return 0;
}

int cmd_bench_scaling(const std::string& depth_list, int repeats) {
    std::vector<int> depths;
    std::istringstream in(depth_list);
    std::string item;
    while (std::getline(in, item, ',')) depths.push_back(std::stoi(item));
    ScalingReport report = timing_scaling_probe(depths, repeats);
    std::fputs(report.to_text().c_str(), stdout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamic layer attention workbench"};
    app.require_subcommand(1);

    std::string spec_path, out_stem;
    long seed_override = -1;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset pair");
    gen->add_option("--spec", spec_path, "dataset spec (key=value)")->required();
    gen->add_option("--out", out_stem, "output stem; writes <stem>_train.dlad and <stem>_test.dlad")
        ->required();
    gen->add_option("--seed", seed_override, "override the spec seed");

    std::string config_path, log_path, checkpoint_path;
    int seeds = 1;
    bool no_parallel = false;
    auto* train = app.add_subcommand("train", "train one or more seeds");
    train->add_option("--config", config_path, "experiment config")->required();
    train->add_option("--seeds", seeds, "number of consecutive seeds");
    train->add_option("--log", log_path, "per-epoch metrics CSV (seed suffix added)");
    train->add_option("--checkpoint-out", checkpoint_path, "checkpoint path (seed suffix added)");
    train->add_flag("--no-parallel", no_parallel, "run seeds sequentially");
    train->add_option("--seed", seed_override, "override the config seed");

    std::string eval_ckpt, eval_data, eval_cfg;
    int eval_batch = 64;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
    eval_cmd->add_option("--data", eval_data)->required();
    eval_cmd->add_option("--config", eval_cfg, "network sidecar (default <checkpoint>.cfg)");
    eval_cmd->add_option("--batch", eval_batch);

    std::string pc_config;
    auto* pc = app.add_subcommand("param-count", "print the parameter ledger");
    pc->add_option("--config", pc_config)->required();

    std::string gc_config;
    double gc_tol = 1e-4, gc_step = 1e-5;
    int gc_coords = 200;
    long gc_seed = -1;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the configured network");
    gc->add_option("--config", gc_config)->required();
    gc->add_option("--tol", gc_tol);
    gc->add_option("--step", gc_step);
    gc->add_option("--coords", gc_coords, "max sampled coordinates per array");
    gc->add_option("--seed", gc_seed);

    std::string da_ckpt, da_data, da_out, da_cfg;
    int da_batch = 64;
    auto* da = app.add_subcommand("dump-attention", "write per-stage attention score tables");
    da->add_option("--checkpoint", da_ckpt)->required();
    da->add_option("--data", da_data)->required();
    da->add_option("--out", da_out, "output directory")->required();
    da->add_option("--config", da_cfg, "network sidecar (default <checkpoint>.cfg)");
    da->add_option("--batch", da_batch);

    std::string bs_depths = "8,16,32";
    int bs_repeats = 25;
    auto* bs = app.add_subcommand("bench-scaling", "time the dual-path mechanisms across depths");
    bs->add_option("--depths", bs_depths, "comma-separated, strictly increasing");
    bs->add_option("--repeats", bs_repeats);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(spec_path, out_stem, seed_override);
        if (train->parsed())
            return cmd_train(config_path, seeds, log_path, checkpoint_path, !no_parallel,
                             seed_override);
        if (eval_cmd->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_cfg, eval_batch);
        if (pc->parsed()) return cmd_param_count(pc_config);
        if (gc->parsed()) return cmd_gradcheck(gc_config, gc_tol, gc_step, gc_coords, gc_seed);
        if (da->parsed()) return cmd_dump_attention(da_ckpt, da_data, da_out, da_cfg, da_batch);
        if (bs->parsed()) return cmd_bench_scaling(bs_depths, bs_repeats);
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    }
    return 0;
}
