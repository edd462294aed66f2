#include "polymotion/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace polymotion {

static_assert(std::endian::native == std::endian::little, "weights.bin is written in native little-endian order");

namespace {

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }

    std::string hex() {
        unsigned char digest[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_, digest, &len);
        static const char* digits = "0123456789abcdef";
        std::string out;
        for (unsigned int i = 0; i < len; ++i) {
            out += digits[digest[i] >> 4];
            out += digits[digest[i] & 15];
        }
        return out;
    }

private:
    EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(const std::string& bytes) {
    Sha256 h;
    h.update(bytes.data(), bytes.size());
    return h.hex();
}

std::string params_sha256(const ParamSet<float>& params, const std::string& prefix) {
    Sha256 h;
    for (const auto& [name, m] : params.arrays()) {
        if (name.rfind(prefix, 0) != 0) continue;
        const std::string header = name + ":" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ";";
        h.update(header.data(), header.size());
        h.update(m.data(), static_cast<std::size_t>(m.size()) * sizeof(float));
    }
    return h.hex();
}

std::string rng_to_string(const Rng& rng) {
    std::ostringstream out;
    out << rng;
    return out.str();
}

Rng rng_from_string(const std::string& s) {
    Rng rng;
    std::istringstream in(s);
    in >> rng;
    if (!in) throw InvalidArgument("malformed RNG state");
    return rng;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory '" + dir.string() + "': " + ec.message());
    nlohmann::json arrays = nlohmann::json::array();
    std::size_t offset = 0;
    std::ofstream bin(dir / "weights.bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw IoError("cannot write '" + (dir / "weights.bin").string() + "'");
    for (const auto& [name, m] : ckpt.arrays.arrays()) {
        const std::size_t bytes = static_cast<std::size_t>(m.size()) * sizeof(float);
        arrays.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", offset}, {"bytes", bytes}});
        bin.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(bytes));
        offset += bytes;
    }
    bin.flush();
    if (!bin) throw IoError("write failed for '" + (dir / "weights.bin").string() + "'");
    nlohmann::json manifest{{"format", "polymotion-checkpoint"},
                            {"version", 1},
                            {"dtype", "float32-le"},
                            {"stage", ckpt.stage},
                            {"config_hash", ckpt.config_hash},
                            {"rng_state", ckpt.rng_state},
                            {"total_bytes", offset},
                            {"arrays", arrays},
                            {"meta", ckpt.meta}};
    std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + (dir / "manifest.json").string() + "'");
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("write failed for '" + (dir / "manifest.json").string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json", std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint manifest '" + (dir / "manifest.json").string() + "'");
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed checkpoint manifest: ") + e.what());
    }
    std::ifstream bin(dir / "weights.bin", std::ios::binary);
    if (!bin) throw IoError("cannot open '" + (dir / "weights.bin").string() + "'");
    const std::string buffer((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    Checkpoint ckpt;
    try {
        if (manifest.at("dtype") != "float32-le") throw IoError("unsupported checkpoint dtype");
        ckpt.stage = manifest.at("stage").get<std::string>();
        ckpt.config_hash = manifest.value("config_hash", std::string());
        ckpt.rng_state = manifest.value("rng_state", std::string());
        ckpt.meta = manifest.value("meta", nlohmann::json::object());
        for (const auto& a : manifest.at("arrays")) {
            const auto rows = a.at("shape").at(0).get<Eigen::Index>();
            const auto cols = a.at("shape").at(1).get<Eigen::Index>();
            const auto offset = a.at("offset").get<std::size_t>();
            const std::size_t bytes = static_cast<std::size_t>(rows * cols) * sizeof(float);
            if (offset + bytes > buffer.size()) throw IoError("checkpoint weights are truncated");
            MatT<float> m(rows, cols);
            std::memcpy(m.data(), buffer.data() + offset, bytes);
            ckpt.arrays.add(a.at("name").get<std::string>(), std::move(m));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed checkpoint manifest: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw IoError(std::string("malformed checkpoint: ") + e.what());
    }
    return ckpt;
}

}  // namespace polymotion
