#include "pimforce/nn/checkpoint.hpp"

#include <array>
#include <fstream>
#include <map>

#include "pimforce/common.hpp"
#include "pimforce/io/tensor_file.hpp"

namespace pimforce::nn {

namespace {
constexpr std::array<char, 4> kArchiveMagic = {'P', 'I', 'M', 'A'};
constexpr std::uint16_t kArchiveVersion = 1;

std::vector<std::uint32_t> dims_of(const Tensor& t) {
    std::vector<std::uint32_t> d;
    for (auto s : t.shape()) d.push_back(static_cast<std::uint32_t>(s));
    return d;
}
}  // namespace

void save_checkpoint(const std::string& path, const PiMForceModel& model, nlohmann::json meta) {
    meta["model"] = model.config().to_json();
    const std::string text = meta.dump();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path);
    os.write(kArchiveMagic.data(), kArchiveMagic.size());
    io::put_u16(os, kArchiveVersion);
    io::put_u32(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto& params = model.parameters();
    const auto& buffers = model.buffers();
    io::put_u32(os, static_cast<std::uint32_t>(params.size() + buffers.size()));
    for (const auto* group : {&params, &buffers})
        for (const auto& [name, t] : *group) {
            io::put_u32(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            io::write_tensor(os, dims_of(t), t.data());
        }
    if (!os) throw Error("write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InvalidInput("cannot open checkpoint " + path);
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kArchiveMagic)
        throw InvalidInput(path + ": not a checkpoint archive");
    if (io::get_u16(is) != kArchiveVersion) throw InvalidInput(path + ": unsupported checkpoint version");
    std::string text(io::get_u32(is), '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(text.size()))) throw InvalidInput(path + ": truncated metadata");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidInput(path + ": bad metadata: " + e.what());
    }
    if (!meta.contains("model")) throw InvalidInput(path + ": metadata lacks the model config");
    PiMForceModel model(ModelConfig::from_json(meta.at("model")), 0);

    std::map<std::string, Tensor> slots;
    for (auto* group : {&model.parameters(), &model.buffers()})
        for (auto& [name, t] : *group) slots[name] = t;
    const std::uint32_t count = io::get_u32(is);
    if (count != slots.size())
        throw InvalidInput(path + ": " + std::to_string(count) + " tensors, model expects " + std::to_string(slots.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(io::get_u32(is), '\0');
        if (!is.read(name.data(), static_cast<std::streamsize>(name.size()))) throw InvalidInput(path + ": truncated");
        const auto data = io::read_tensor(is);
        auto it = slots.find(name);
        if (it == slots.end()) throw InvalidInput(path + ": unexpected tensor " + name);
        if (data.values.size() != it->second.numel() || dims_of(it->second) != data.dims)
            throw InvalidInput(path + ": tensor " + name + " has the wrong shape");
        std::copy(data.values.begin(), data.values.end(), it->second.data().begin());
        slots.erase(it);
    }
    model.set_training(false);
    return {std::move(model), std::move(meta)};
}

}  // namespace pimforce::nn
