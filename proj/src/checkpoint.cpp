#include "vpfnet/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace vpfnet {

namespace {
constexpr char kMagic[8] = {'V', 'P', 'F', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    nlohmann::json header;
    header["version"] = kVersion;
    header["step"] = ckpt.step;
    header["config"] = ckpt.config;
    header["meta"] = ckpt.meta;
    nlohmann::json dir = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        nlohmann::json e;
        e["name"] = name;
        e["dtype"] = "f8";
        e["shape"] = t.shape();
        e["offset"] = offset;
        offset += t.size() * sizeof(double);
        dir.push_back(e);
    }
    header["tensors"] = dir;
    std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&kVersion), 4);
    std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : ckpt.tensors)
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!out) throw std::runtime_error("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != std::string(kMagic, 8))
        throw std::runtime_error("not a checkpoint file: " + path);
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version in " + path);
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw std::runtime_error("truncated checkpoint header: " + path);

    nlohmann::json header = nlohmann::json::parse(hs);
    Checkpoint ckpt;
    ckpt.step = header.value("step", std::uint64_t{0});
    if (header.contains("config"))
        ckpt.config = header["config"].get<std::map<std::string, std::string>>();
    if (header.contains("meta"))
        ckpt.meta = header["meta"].get<std::map<std::string, std::string>>();

    for (const auto& e : header["tensors"]) {
        std::string name = e["name"].get<std::string>();
        std::vector<std::size_t> shape = e["shape"].get<std::vector<std::size_t>>();
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!in) throw std::runtime_error("truncated checkpoint data: " + path);
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }
    return ckpt;
}

void collect_tensors(nn::ParamList& params, nn::BufferList& buffers,
                     std::map<std::string, Tensor>& out) {
    for (auto& p : params) out[p.name] = p.var.value();
    for (auto& b : buffers) out[b.name] = *b.tensor;
}

std::size_t apply_tensors(const std::map<std::string, Tensor>& saved,
                          nn::ParamList& params, nn::BufferList& buffers,
                          bool allow_missing) {
    std::size_t applied = 0;
    auto fetch = [&](const std::string& name, const std::vector<std::size_t>& shape)
        -> const Tensor* {
        auto it = saved.find(name);
        if (it == saved.end()) {
            if (allow_missing) return nullptr;
            throw std::runtime_error("checkpoint missing tensor: " + name);
        }
        if (it->second.shape() != shape)
            throw std::runtime_error("checkpoint shape mismatch for " + name + ": have " +
                                     Tensor::shape_string(it->second.shape()) +
                                     ", expected " + Tensor::shape_string(shape));
        return &it->second;
    };
    for (auto& p : params)
        if (const Tensor* t = fetch(p.name, p.var.value().shape())) {
            p.var.value() = *t;
            ++applied;
        }
    for (auto& b : buffers)
        if (const Tensor* t = fetch(b.name, b.tensor->shape())) {
            *b.tensor = *t;
            ++applied;
        }
    return applied;
}

} // namespace vpfnet
