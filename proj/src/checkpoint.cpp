#include "sar/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sar {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'R', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; byte-swapping is not implemented");

size_t numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) n *= size_t(d);
    return n;
}

}  // namespace

const CheckpointTensor& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return t;
    }
    throw std::out_of_range("checkpoint: no tensor named " + name);
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return true;
    }
    return false;
}

void Checkpoint::add(const std::string& name, const TensorPtr& t) {
    tensors.emplace_back(name, CheckpointTensor{t->shape, *t->val});
}

void Checkpoint::add(const std::string& name, std::vector<int> shape, std::vector<float> data) {
    if (numel(shape) != data.size()) throw std::invalid_argument("checkpoint: shape/data mismatch");
    tensors.emplace_back(name, CheckpointTensor{std::move(shape), std::move(data)});
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    nlohmann::json header;
    header["meta"] = ckpt.meta;
    nlohmann::json list = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        const uint64_t nbytes = uint64_t(t.data.size()) * sizeof(float);
        list.push_back({{"name", name},
                        {"shape", t.shape},
                        {"dtype", "f32"},
                        {"offset", offset},
                        {"nbytes", nbytes}});
        offset += nbytes;
    }
    header["tensors"] = list;
    const std::string htext = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    f.write(kMagic, sizeof(kMagic));
    const uint64_t hlen = htext.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(htext.data(), std::streamsize(htext.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        f.write(reinterpret_cast<const char*>(t.data.data()),
                std::streamsize(t.data.size() * sizeof(float)));
    }
    if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not a checkpoint file: " + path);
    }
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string htext(hlen, '\0');
    f.read(htext.data(), std::streamsize(hlen));
    if (!f) throw std::runtime_error("truncated checkpoint header: " + path);
    const nlohmann::json header = nlohmann::json::parse(htext);

    Checkpoint ckpt;
    ckpt.meta = header.value("meta", nlohmann::json::object());
    const auto blob_start = f.tellg();
    for (const auto& entry : header.at("tensors")) {
        if (entry.at("dtype").get<std::string>() != "f32") {
            throw std::runtime_error("checkpoint: unsupported dtype");
        }
        CheckpointTensor t;
        t.shape = entry.at("shape").get<std::vector<int>>();
        const uint64_t nbytes = entry.at("nbytes").get<uint64_t>();
        if (nbytes != numel(t.shape) * sizeof(float)) {
            throw std::runtime_error("checkpoint: size mismatch for " + entry.at("name").get<std::string>());
        }
        t.data.resize(nbytes / sizeof(float));
        f.seekg(blob_start + std::streamoff(entry.at("offset").get<uint64_t>()));
        f.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(nbytes));
        if (!f) throw std::runtime_error("truncated checkpoint blob: " + path);
        ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
    return ckpt;
}

}  // namespace sar
