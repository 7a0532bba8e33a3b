#include "fsl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fsl/error.hpp"
#include "fsl/rng.hpp"

namespace fsl {

void Dataset::validate() const {
    if (classes < 2) throw InputError("dataset: need at least 2 classes");
    if (X.ndim() != 2 || X.dim(0) != y.size()) {
        throw InputError("dataset: feature matrix rows do not match label count");
    }
    std::vector<std::size_t> per_class(classes, 0);
    for (int label : y) {
        if (label < 0 || static_cast<std::size_t>(label) >= classes) {
            throw InputError("dataset: label " + std::to_string(label) + " out of range");
        }
        ++per_class[static_cast<std::size_t>(label)];
    }
    for (std::size_t k = 0; k < classes; ++k) {
        if (per_class[k] == 0) {
            throw InputError("dataset: class " + std::to_string(k) + " has no samples");
        }
    }
}

Dataset generate_synthetic(std::size_t n, std::size_t classes, double separation,
                           std::uint64_t seed, std::size_t dim) {
    if (classes < 2) throw ConfigError("generate_synthetic: need at least 2 classes");
    if (n < 10 * classes) {
        throw ConfigError("generate_synthetic: need at least 10 samples per class");
    }
    if (dim < classes) throw ConfigError("generate_synthetic: dim must be >= class count");
    if (!(separation >= 0.0)) throw ConfigError("generate_synthetic: separation must be >= 0");

    Rng rng(seed);
    Dataset data;
    data.classes = classes;
    data.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) data.y[i] = static_cast<int>(i % classes);
    rng.shuffle(data.y);

    // Class k mean = (separation / sqrt 2) e_k: pairwise mean distances are
    // exactly `separation`, noise is unit Gaussian per coordinate.
    const double lift = separation / std::sqrt(2.0);
    data.X = Tensor({n, dim});
    for (std::size_t i = 0; i < n; ++i) {
        double* row = data.X.data() + i * dim;
        for (std::size_t j = 0; j < dim; ++j) row[j] = rng.normal();
        row[static_cast<std::size_t>(data.y[i])] += lift;
    }
    data.validate();
    return data;
}

namespace {

Dataset gather(const Dataset& data, const std::vector<std::size_t>& idx) {
    const std::size_t dim = data.dim();
    Dataset out;
    out.classes = data.classes;
    out.X = Tensor({idx.size(), dim});
    out.y.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* src = data.X.data() + idx[i] * dim;
        double* dst = out.X.data() + i * dim;
        for (std::size_t j = 0; j < dim; ++j) dst[j] = src[j];
        out.y[i] = data.y[idx[i]];
    }
    return out;
}

}  // namespace

PublicSplit split_public(const Dataset& data, double public_fraction, std::uint64_t seed) {
    if (!(public_fraction >= 0.0) || !(public_fraction < 1.0)) {
        throw ConfigError("split_public: fraction must lie in [0, 1)");
    }
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx);
    const std::size_t n_pub =
        static_cast<std::size_t>(public_fraction * static_cast<double>(data.size()));
    std::vector<std::size_t> pub(idx.begin(), idx.begin() + n_pub);
    std::vector<std::size_t> priv(idx.begin() + n_pub, idx.end());
    std::sort(pub.begin(), pub.end());
    std::sort(priv.begin(), priv.end());

    PublicSplit out;
    out.public_set = gather(data, pub);
    out.private_set = gather(data, priv);
    std::vector<bool> seen(data.classes, false);
    for (int label : out.private_set.y) seen[static_cast<std::size_t>(label)] = true;
    for (std::size_t k = 0; k < data.classes; ++k) {
        if (!seen[k]) {
            throw PartitionError("split_public: class " + std::to_string(k) +
                                 " vanished from the private pool; lower the public fraction");
        }
    }
    return out;
}

Tensor gather_rows(const Dataset& data, std::span<const std::size_t> idx) {
    const std::size_t dim = data.dim();
    Tensor X({idx.size(), dim});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= data.size()) throw InputError("gather_rows: index out of range");
        const double* src = data.X.data() + idx[i] * dim;
        double* dst = X.data() + i * dim;
        for (std::size_t j = 0; j < dim; ++j) dst[j] = src[j];
    }
    return X;
}

std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> idx) {
    std::vector<int> y(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= data.size()) throw InputError("gather_labels: index out of range");
        y[i] = data.y[idx[i]];
    }
    return y;
}

std::string to_string(PartitionSpec::Kind kind) {
    switch (kind) {
        case PartitionSpec::Kind::iid: return "iid";
        case PartitionSpec::Kind::dirichlet: return "dirichlet";
        case PartitionSpec::Kind::pathological: return "pathological";
    }
    return "?";
}

PartitionSpec::Kind partition_kind_from_string(const std::string& name) {
    if (name == "iid") return PartitionSpec::Kind::iid;
    if (name == "dirichlet") return PartitionSpec::Kind::dirichlet;
    if (name == "pathological") return PartitionSpec::Kind::pathological;
    throw ConfigError("unknown partition kind '" + name +
                      "' (expected iid, dirichlet or pathological)");
}

void PartitionSpec::validate(std::size_t classes) const {
    if (clients < 1) throw ConfigError("partition: need at least 1 client");
    if (!(test_fraction >= 0.0) || !(test_fraction < 1.0)) {
        throw ConfigError("partition: test fraction must lie in [0, 1)");
    }
    if (kind == Kind::dirichlet && !(alpha > 0.0)) {
        throw ConfigError("partition: dirichlet alpha must be > 0");
    }
    if (kind == Kind::pathological) {
        if (labels_per_client < 1 || labels_per_client > classes) {
            throw ConfigError("partition: labels per client must lie in [1, " +
                              std::to_string(classes) + "]");
        }
    }
}

namespace {

// Integer counts proportional to p summing to total: floor first, then hand
// the leftovers to the largest fractional parts (ties to the lower index).
std::vector<std::size_t> largest_remainder(const std::vector<double>& p, std::size_t total) {
    const std::size_t m = p.size();
    std::vector<std::size_t> counts(m);
    std::vector<std::pair<double, std::size_t>> frac(m);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const double target = p[i] * static_cast<double>(total);
        counts[i] = static_cast<std::size_t>(target);
        frac[i] = {target - static_cast<double>(counts[i]), i};
        assigned += counts[i];
    }
    std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t r = 0; assigned < total; ++r, ++assigned) counts[frac[r % m].second] += 1;
    return counts;
}

std::vector<std::vector<std::size_t>> indices_by_label(const Dataset& data) {
    std::vector<std::vector<std::size_t>> by_label(data.classes);
    for (std::size_t i = 0; i < data.size(); ++i) {
        by_label[static_cast<std::size_t>(data.y[i])].push_back(i);
    }
    return by_label;
}

// One allocation attempt; returns per-client index lists (possibly with empty
// clients, which the caller treats as a failed draw).
std::vector<std::vector<std::size_t>> allocate(const Dataset& data, const PartitionSpec& spec,
                                               Rng& rng,
                                               std::vector<std::vector<double>>* proportions) {
    const std::size_t n = data.size(), m = spec.clients;
    std::vector<std::vector<std::size_t>> alloc(m);

    switch (spec.kind) {
        case PartitionSpec::Kind::iid: {
            std::vector<std::size_t> idx(n);
            std::iota(idx.begin(), idx.end(), 0);
            rng.shuffle(idx);
            std::size_t pos = 0;
            for (std::size_t i = 0; i < m; ++i) {
                const std::size_t take = n / m + (i < n % m ? 1 : 0);
                alloc[i].assign(idx.begin() + pos, idx.begin() + pos + take);
                pos += take;
            }
            break;
        }
        case PartitionSpec::Kind::dirichlet: {
            proportions->clear();
            for (auto& class_idx : indices_by_label(data)) {
                rng.shuffle(class_idx);
                std::vector<double> p = rng.dirichlet_symmetric(spec.alpha, m);
                std::vector<std::size_t> counts = largest_remainder(p, class_idx.size());
                std::size_t pos = 0;
                for (std::size_t i = 0; i < m; ++i) {
                    alloc[i].insert(alloc[i].end(), class_idx.begin() + pos,
                                    class_idx.begin() + pos + counts[i]);
                    pos += counts[i];
                }
                proportions->push_back(std::move(p));
            }
            break;
        }
        case PartitionSpec::Kind::pathological: {
            const std::size_t C = data.classes;
            const std::size_t c = std::min(spec.labels_per_client, C);
            if (m * c < C) {
                throw PartitionError("pathological partition: " + std::to_string(m) +
                                     " clients x " + std::to_string(c) +
                                     " labels cannot cover " + std::to_string(C) + " classes");
            }
            // Client i holds labels {(i*c + j) mod C}: exactly c distinct
            // labels each, and holders per label balanced across clients.
            std::vector<std::vector<std::size_t>> holders(C);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < c; ++j) holders[(i * c + j) % C].push_back(i);
            }
            auto by_label = indices_by_label(data);
            for (std::size_t label = 0; label < C; ++label) {
                auto& idx = by_label[label];
                const std::size_t h = holders[label].size();
                if (h == 0) continue;  // nobody wants this label (m*c < C)
                if (idx.size() < h) {
                    throw PartitionError(
                        "pathological partition: class " + std::to_string(label) + " has " +
                        std::to_string(idx.size()) + " samples for " + std::to_string(h) +
                        " holders; dataset too small for this (clients, labels-per-client)");
                }
                rng.shuffle(idx);
                std::size_t pos = 0;
                for (std::size_t j = 0; j < h; ++j) {
                    const std::size_t take = idx.size() / h + (j < idx.size() % h ? 1 : 0);
                    auto& dst = alloc[holders[label][j]];
                    dst.insert(dst.end(), idx.begin() + pos, idx.begin() + pos + take);
                    pos += take;
                }
            }
            break;
        }
    }
    return alloc;
}

}  // namespace

PartitionOutcome partition(const Dataset& data, const PartitionSpec& spec) {
    data.validate();
    spec.validate(data.classes);
    constexpr std::size_t kMaxAttempts = 20;

    Rng rng(spec.seed);
    PartitionOutcome out;
    for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
        std::vector<std::vector<double>> proportions;
        auto alloc = allocate(data, spec, rng, &proportions);
        const bool ok = std::none_of(alloc.begin(), alloc.end(),
                                     [](const auto& a) { return a.empty(); });
        if (!ok) {
            out.retries = attempt + 1;
            continue;
        }

        out.dirichlet_proportions = std::move(proportions);
        out.shards.clear();
        out.shards.reserve(spec.clients);
        for (std::size_t i = 0; i < spec.clients; ++i) {
            std::sort(alloc[i].begin(), alloc[i].end());
            ClientShard shard;
            shard.client_id = static_cast<int>(i);
            // Stratified split: the tail of each label group becomes test,
            // so test label proportions track train's.
            std::vector<std::vector<std::size_t>> groups(data.classes);
            for (std::size_t idx : alloc[i]) {
                groups[static_cast<std::size_t>(data.y[idx])].push_back(idx);
            }
            for (const auto& g : groups) {
                const std::size_t t =
                    static_cast<std::size_t>(spec.test_fraction * static_cast<double>(g.size()));
                for (std::size_t j = 0; j + t < g.size(); ++j) shard.train.push_back(g[j]);
                for (std::size_t j = g.size() - t; j < g.size(); ++j) shard.test.push_back(g[j]);
            }
            std::sort(shard.train.begin(), shard.train.end());
            std::sort(shard.test.begin(), shard.test.end());
            out.shards.push_back(std::move(shard));
        }
        return out;
    }
    throw PartitionError("partition: a client ended up empty after " +
                         std::to_string(kMaxAttempts) + " draws; too little data for " +
                         std::to_string(spec.clients) + " clients");
}

void write_partition_manifest(const std::string& path, const PartitionSpec& spec,
                              const std::vector<ClientShard>& shards,
                              const std::string& header_extra) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw InputError("cannot open manifest for writing: " + path);
    os << "# fsl-partition v1\n";
    os << "# kind " << to_string(spec.kind) << " clients " << spec.clients << " alpha "
       << spec.alpha << " labels_per_client " << spec.labels_per_client << " test_fraction "
       << spec.test_fraction << " seed " << spec.seed << "\n";
    if (!header_extra.empty()) os << "# " << header_extra << "\n";
    for (const auto& s : shards) {
        os << "client " << s.client_id << " train " << s.train.size();
        for (std::size_t i : s.train) os << ' ' << i;
        os << "\nclient " << s.client_id << " test " << s.test.size();
        for (std::size_t i : s.test) os << ' ' << i;
        os << "\n";
    }
}

std::vector<ClientShard> load_partition_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open manifest: " + path);
    std::vector<ClientShard> shards;
    std::string line;
    bool versioned = false;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line.find("fsl-partition v1") != std::string::npos) versioned = true;
            continue;
        }
        std::istringstream ls(line);
        std::string tag, side;
        int id = -1;
        std::size_t count = 0;
        if (!(ls >> tag >> id >> side >> count) || tag != "client" ||
            (side != "train" && side != "test")) {
            throw InputError("manifest: malformed line: " + line);
        }
        if (static_cast<std::size_t>(id) >= shards.size()) {
            shards.resize(static_cast<std::size_t>(id) + 1);
            shards.back().client_id = id;
        }
        auto& dst = side == "train" ? shards[static_cast<std::size_t>(id)].train
                                    : shards[static_cast<std::size_t>(id)].test;
        dst.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            if (!(ls >> dst[i])) throw InputError("manifest: truncated index list: " + line);
        }
        shards[static_cast<std::size_t>(id)].client_id = id;
    }
    if (!versioned) throw InputError("manifest: missing fsl-partition v1 header: " + path);
    return shards;
}

}  // namespace fsl
