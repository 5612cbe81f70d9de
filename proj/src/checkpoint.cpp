#include "mfuser/checkpoint.hpp"

#include <openssl/evp.h>

#include <cstdint>
#include <cstring>
#include <fstream>

namespace mf {

namespace {

constexpr char kMagic[] = "MFCKPT";
constexpr uint64_t kVersion = 1;

void put_u64(std::vector<unsigned char>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_f64(std::vector<unsigned char>& out, double d) {
    uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(out, v);
}

void put_str(std::vector<unsigned char>& out, const std::string& s) {
    put_u64(out, s.size());
    out.insert(out.end(), s.begin(), s.end());
}

void put_tensor(std::vector<unsigned char>& out, const std::string& name,
                const Tensor& t) {
    put_str(out, name);
    put_u64(out, t.shape().size());
    for (int64_t d : t.shape()) put_u64(out, static_cast<uint64_t>(d));
    for (double v : t.vec()) put_f64(out, v);
}

// Serializes one section: name, entry count, tensor records in store order.
std::vector<unsigned char> section_bytes(const ParamStore& ps, bool trainable) {
    std::vector<unsigned char> out;
    put_str(out, trainable ? "trainable" : "frozen");
    uint64_t n = 0;
    for (const auto& e : ps.entries())
        if (e.trainable == trainable) ++n;
    put_u64(out, n);
    for (const auto& e : ps.entries())
        if (e.trainable == trainable) put_tensor(out, e.name, e.tensor);
    return out;
}

struct Reader {
    const std::vector<unsigned char>& b;
    size_t pos = 0;
    uint64_t u64() {
        if (pos + 8 > b.size()) throw ConfigError("checkpoint truncated");
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        uint64_t v = u64();
        double d;
        std::memcpy(&d, &v, 8);
        return d;
    }
    std::string str() {
        uint64_t n = u64();
        if (pos + n > b.size()) throw ConfigError("checkpoint truncated");
        std::string s(b.begin() + pos, b.begin() + pos + n);
        pos += n;
        return s;
    }
};

void read_section(Reader& r, ParamStore& ps, bool trainable) {
    std::string sect = r.str();
    std::string want = trainable ? "trainable" : "frozen";
    if (sect != want)
        throw ConfigError("checkpoint: expected section '" + want + "', got '" + sect +
                          "'");
    uint64_t n = r.u64();
    for (uint64_t i = 0; i < n; ++i) {
        std::string name = r.str();
        uint64_t rank = r.u64();
        Shape shape(rank);
        for (uint64_t d = 0; d < rank; ++d) shape[d] = static_cast<int64_t>(r.u64());
        if (!ps.contains(name))
            throw ConfigError("checkpoint: unknown parameter '" + name + "'");
        Tensor t = ps.get(name);
        if (t.shape() != shape)
            throw ConfigError("checkpoint: shape mismatch for '" + name + "': file " +
                              shape_str(shape) + " vs model " + shape_str(t.shape()));
        for (int64_t k = 0; k < t.numel(); ++k) t.data()[k] = r.f64();
    }
}

}  // namespace

std::string sha256_hex(const std::vector<unsigned char>& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw ConfigError("sha256 failure");
    }
    EVP_MD_CTX_free(ctx);
    static const char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string frozen_hash(const ParamStore& ps) {
    return sha256_hex(section_bytes(ps, false));
}

std::string trainable_hash(const ParamStore& ps) {
    return sha256_hex(section_bytes(ps, true));
}

void save_checkpoint(const std::string& path, const ParamStore& ps) {
    std::vector<unsigned char> out(kMagic, kMagic + sizeof(kMagic) - 1);
    put_u64(out, kVersion);
    auto frozen = section_bytes(ps, false);
    auto trainable = section_bytes(ps, true);
    out.insert(out.end(), frozen.begin(), frozen.end());
    out.insert(out.end(), trainable.begin(), trainable.end());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(out.data()),
            static_cast<std::streamsize>(out.size()));
    if (!f) throw ConfigError("short write to " + path);
}

void load_checkpoint(const std::string& path, ParamStore& ps) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    const size_t mlen = sizeof(kMagic) - 1;
    if (bytes.size() < mlen || std::memcmp(bytes.data(), kMagic, mlen) != 0)
        throw ConfigError("not a checkpoint file: " + path);
    Reader r{bytes, mlen};
    uint64_t version = r.u64();
    if (version != kVersion)
        throw ConfigError("unsupported checkpoint version " + std::to_string(version));
    read_section(r, ps, false);
    read_section(r, ps, true);
}

}  // namespace mf
