#include "fsl/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <utility>

#include "fsl/checkpoint.hpp"
#include "fsl/error.hpp"
#include "fsl/probes.hpp"
#include "fsl/rng.hpp"

namespace fsl {
namespace {

// Everything both `run` and `probe` need before any training happens:
// dataset, public/private split, partition, (optionally pre-trained) encoder.
struct Prepared {
    Dataset dataset;
    PublicSplit split;
    PartitionSpec pspec;  // partition spec with its derived sub-seed filled in
    PartitionOutcome parts;
    Stack encoder;
    RoundConfig rc;
    std::string header;  // "config <hash> seed <seed>", stamped into every file
};

Prepared prepare(const ExperimentConfig& cfg) {
    cfg.validate();
    Prepared p;
    p.header = "config " + config_hash(cfg) + " seed " + std::to_string(cfg.seed);
    p.dataset = generate_synthetic(cfg.data_samples, cfg.data_classes, cfg.data_separation,
                                   derive_seed(cfg.seed, Stream::dataset), cfg.dims.input());
    p.split = split_public(p.dataset, cfg.public_fraction, derive_seed(cfg.seed, Stream::dataset, 1));
    p.pspec = cfg.partition;
    p.pspec.seed = derive_seed(cfg.seed, Stream::partition);
    p.parts = partition(p.split.private_set, p.pspec);

    Rng enc_rng(derive_seed(cfg.seed, Stream::encoder_init));
    p.encoder = make_encoder(cfg.dims, enc_rng);
    if (cfg.pretrain_enabled && cfg.pretrain_epochs > 0) {
        p.encoder = pretrain_encoder(cfg.dims, std::move(p.encoder), p.split.public_set.X,
                                     p.split.public_set.y, cfg.pretrain_epochs, cfg.pretrain_lr,
                                     derive_seed(cfg.seed, Stream::pretrain));
    }
    p.rc = cfg.round;
    p.rc.seed = cfg.seed;
    return p;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw InputError("cannot open " + path.string() + " for writing");
    os << content;
    if (!os) throw InputError("short write to " + path.string());
}

std::string render_metrics(const std::string& header, const std::vector<MetricsRecord>& metrics) {
    std::ostringstream os;
    os << "# fsl-metrics v1\n# " << header << '\n';
    os << "round,mean_train_loss,max_train_loss,mean_test_acc,"
          "sigma_g_mean,sigma_g_max,bytes_up,bytes_down\n";
    for (const MetricsRecord& r : metrics) {
        os << r.round << ',' << format_double(r.mean_train_loss) << ','
           << format_double(r.max_train_loss) << ',' << format_double(r.mean_test_acc) << ',';
        if (r.has_probe) os << format_double(r.sigma_g_mean);
        os << ',';
        if (r.has_probe) os << format_double(r.sigma_g_max);
        os << ',' << r.bytes_up << ',' << r.bytes_down << '\n';
    }
    return os.str();
}

void write_transcript_files(const std::filesystem::path& dir, const std::string& header,
                            const Transcript& transcript) {
    {
        std::ostringstream os;
        os << "# fsl-transcript v1\n# " << header << '\n';
        transcript.write_log(os);
        write_file(dir / "transcript.log", os.str());
    }
    {
        std::ostringstream os;
        os << "# fsl-transcript-summary v1\n# " << header << '\n';
        transcript.write_summary(os);
        write_file(dir / "transcript.summary", os.str());
    }
}

void add_stack(std::vector<std::pair<std::string, const Tensor*>>& out, const std::string& prefix,
               const Stack& stack) {
    const auto ps = stack.params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        out.emplace_back(prefix + '.' + std::to_string(i) + '.' + ps[i]->name, &ps[i]->value);
    }
}

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
    const auto d = std::chrono::steady_clock::now() - start;
    return std::chrono::duration<double>(d).count();
}

}  // namespace

void run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, bool quiet) {
    const auto t_start = std::chrono::steady_clock::now();
    Prepared p = prepare(cfg);

    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    write_file(dir / "config.resolved",
               "# fsl-config v1\n# " + p.header + '\n' + serialize_config(cfg));
    write_partition_manifest((dir / "partition.txt").string(), p.pspec, p.parts.shards, p.header);

    std::vector<MetricsRecord> metrics;
    if (cfg.algorithm == Algorithm::fes) {
        TrainOutput out = run_training(p.rc, cfg.dims, p.split.private_set, p.parts.shards,
                                       std::move(p.encoder));
        std::vector<std::pair<std::string, const Tensor*>> tensors;
        add_stack(tensors, "encoder", out.server.encoder);
        for (const ClientState& c : out.clients) {
            add_stack(tensors, "client" + std::to_string(c.id) + ".head", c.head);
            add_stack(tensors, "client" + std::to_string(c.id) + ".tail", c.tail);
        }
        save_checkpoint((dir / "checkpoint.bin").string(), config_hash_value(cfg), cfg.seed,
                        tensors);
        write_transcript_files(dir, p.header, out.transcript);
        metrics = std::move(out.metrics);
    } else {
        FedAvgOutput out = fedavg_baseline(p.rc, cfg.dims, p.split.private_set, p.parts.shards,
                                           std::move(p.encoder));
        std::vector<std::pair<std::string, const Tensor*>> tensors;
        add_stack(tensors, "model.head", out.model.head);
        add_stack(tensors, "model.encoder", out.model.encoder);
        add_stack(tensors, "model.tail", out.model.tail);
        save_checkpoint((dir / "checkpoint.bin").string(), config_hash_value(cfg), cfg.seed,
                        tensors);
        write_transcript_files(dir, p.header, out.transcript);
        metrics = std::move(out.metrics);
    }
    write_file(dir / "metrics.csv", render_metrics(p.header, metrics));

    if (!quiet) {
        std::uint64_t up = 0, down = 0;
        for (const MetricsRecord& r : metrics) {
            up += r.bytes_up;
            down += r.bytes_down;
        }
        std::printf("%s\n", p.header.c_str());
        if (metrics.empty()) {
            std::printf("rounds 0\n");
        } else {
            std::printf("rounds %zu  final mean test accuracy %s\n", metrics.size(),
                        format_double(metrics.back().mean_test_acc).c_str());
        }
        std::printf("bytes up %llu down %llu\n", static_cast<unsigned long long>(up),
                    static_cast<unsigned long long>(down));
        std::printf("wrote %s\n", dir.string().c_str());
        std::printf("elapsed %.2f s\n", elapsed_seconds(t_start));
    }
}

void run_probe(const ExperimentConfig& cfg, const std::string& out_dir, bool quiet) {
    const auto t_start = std::chrono::steady_clock::now();
    Prepared p = prepare(cfg);

    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    write_partition_manifest((dir / "partition.txt").string(), p.pspec, p.parts.shards, p.header);

    // Probe at a shared reference point: fresh head/tail around the configured
    // (possibly pre-trained) encoder.
    Rng scaffold(derive_seed(cfg.seed, Stream::fedavg_init));
    Stack head = make_head(cfg.dims, scaffold);
    Stack tail = make_tail(cfg.dims, scaffold);
    SplitModel model(cfg.dims, std::move(head), std::move(p.encoder), std::move(tail));

    const Dataset& data = p.split.private_set;
    const SigmaGResult sg = estimate_sigma_g(model, data, p.parts.shards);

    std::vector<double> sigma_l(p.parts.shards.size(), 0.0);
    std::vector<SmoothnessResult> smooth(p.parts.shards.size());
    SplitModel work = model.clone();
    const Tensor w0 = flatten_values(std::as_const(model).all_params());
    for (std::size_t i = 0; i < p.parts.shards.size(); ++i) {
        const ClientShard& shard = p.parts.shards[i];
        const std::size_t bs = std::min<std::size_t>(p.rc.batch, shard.train.size());
        sigma_l[i] = estimate_sigma_l(model, data, shard, cfg.probe_sigma_l_batches, bs,
                                      derive_seed(cfg.seed, Stream::probe,
                                                  static_cast<std::uint64_t>(shard.client_id)));

        const Tensor Xi = gather_rows(data, shard.train);
        const std::vector<int> yi = gather_labels(data, shard.train);
        auto grad_fn = [&](const Tensor& w) {
            load_values(w, work.all_params());
            work.zero_grads();
            work.backprop(Xi, std::span<const int>(yi));
            return flatten_grads(std::as_const(work).all_params());
        };
        Rng prng(derive_seed(cfg.seed, Stream::probe,
                             static_cast<std::uint64_t>(shard.client_id), 1));
        std::vector<std::pair<Tensor, Tensor>> pairs;
        for (int j = 0; j < 3; ++j) {
            Tensor a = w0, b = w0;
            for (std::size_t d = 0; d < a.size(); ++d) a[d] += 0.05 * prng.normal();
            for (std::size_t d = 0; d < b.size(); ++d) b[d] += 0.05 * prng.normal();
            pairs.emplace_back(std::move(a), std::move(b));
        }
        smooth[i] = estimate_smoothness(grad_fn, pairs);
    }

    std::ostringstream os;
    os << "# fsl-probes v1\n# " << p.header << '\n';
    os << "sigma_g mean " << format_double(sg.mean_sq) << '\n';
    os << "sigma_g max " << format_double(sg.max_sq) << '\n';
    for (std::size_t i = 0; i < p.parts.shards.size(); ++i) {
        os << "client " << p.parts.shards[i].client_id << " sigma_g "
           << format_double(sg.per_client[i]) << " sigma_l " << format_double(sigma_l[i])
           << " smoothness " << format_double(smooth[i].max_ratio) << " skipped "
           << smooth[i].skipped << '\n';
    }
    write_file(dir / "probes.txt", os.str());

    if (!quiet) {
        std::printf("%s\n", p.header.c_str());
        std::printf("sigma_g mean %s max %s\n", format_double(sg.mean_sq).c_str(),
                    format_double(sg.max_sq).c_str());
        std::printf("wrote %s\n", (dir / "probes.txt").string().c_str());
        std::printf("elapsed %.2f s\n", elapsed_seconds(t_start));
    }
}

void run_sweep(const ExperimentConfig& base, const std::string& axis,
               const std::vector<std::string>& values, const std::string& out_dir, bool quiet) {
    struct Axis {
        const char* name;
        const char* key;
    };
    static const Axis axes[] = {
        {"K", "federation.local_steps"},   {"M", "federation.clients"},
        {"q", "federation.sample_ratio"},  {"fedround", "federation.fedround"},
        {"alpha", "partition.alpha"},      {"c", "partition.labels_per_client"},
        {"option", "federation.option"},
    };
    const Axis* found = nullptr;
    for (const Axis& a : axes) {
        if (axis == a.name) {
            found = &a;
            break;
        }
    }
    if (!found) {
        std::string names;
        for (const Axis& a : axes) {
            if (!names.empty()) names += ", ";
            names += a.name;
        }
        throw ConfigError("sweep axis '" + axis + "' not recognized (expected one of " + names +
                          ")");
    }
    if (values.empty()) throw ConfigError("sweep: need at least one value");

    base.validate();
    for (const std::string& value : values) {
        // Route the override through the parser so it gets the same
        // validation and cross-field syncing as a hand-written config.
        const std::string text =
            serialize_config(base) + std::string(found->key) + " = " + value + '\n';
        const ExperimentConfig cfg = parse_config(text);
        const std::string dir = out_dir + "/" + axis + "=" + value;
        if (!quiet) std::printf("sweep %s = %s -> %s\n", axis.c_str(), value.c_str(), dir.c_str());
        run_experiment(cfg, dir, quiet);
    }
}

}  // namespace fsl
