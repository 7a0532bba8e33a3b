#include "fsl/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "fsl/error.hpp"

namespace fsl {

namespace {

constexpr char kMagic[8] = {'F', 'S', 'L', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t get_u64(std::istream& is, const char* what) {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) {
        throw InputError(std::string("checkpoint: truncated while reading ") + what);
    }
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, std::uint64_t config_hash, std::uint64_t seed,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw InputError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    put_u64(os, config_hash);
    put_u64(os, seed);
    put_u64(os, tensors.size());
    for (const auto& [name, tensor] : tensors) {
        put_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u64(os, tensor->ndim());
        for (std::size_t i = 0; i < tensor->ndim(); ++i) put_u64(os, tensor->dim(i));
        os.write(reinterpret_cast<const char*>(tensor->data()),
                 static_cast<std::streamsize>(tensor->size() * sizeof(double)));
    }
    if (!os) throw InputError("checkpoint write failed: " + path);
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("cannot open checkpoint: " + path);
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw InputError("checkpoint: bad magic in " + path);
    }
    Checkpoint ck;
    ck.config_hash = get_u64(is, "config hash");
    ck.seed = get_u64(is, "seed");
    const std::uint64_t count = get_u64(is, "tensor count");
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t name_len = get_u64(is, "name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), static_cast<std::streamsize>(name_len))) {
            throw InputError("checkpoint: truncated tensor name");
        }
        const std::uint64_t ndim = get_u64(is, "rank");
        std::vector<std::size_t> shape(ndim);
        std::size_t total = 1;
        for (auto& d : shape) {
            d = static_cast<std::size_t>(get_u64(is, "dimension"));
            total *= d;
        }
        Tensor t(shape);
        if (!is.read(reinterpret_cast<char*>(t.data()),
                     static_cast<std::streamsize>(total * sizeof(double)))) {
            throw InputError("checkpoint: truncated data for tensor " + name);
        }
        ck.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ck;
}

}  // namespace fsl
