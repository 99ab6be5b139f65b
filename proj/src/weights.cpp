#include "drc/weights.hpp"

#include <fstream>

#include <json.hpp>

#include "drc/nn/layers.hpp"

namespace drc {

using nlohmann::json;

void WeightArchive::add(const std::string& name, std::vector<int> shape,
                        std::vector<float> data) {
    if (Tensor::numel_of(shape) != data.size())
        throw DataError("archive entry '" + name + "': shape " + Tensor::shape_str(shape) +
                        " does not match " + std::to_string(data.size()) + " values");
    if (entries_.count(name))
        throw DataError("archive entry '" + name + "' added twice");
    entries_[name] = Entry{std::move(shape), std::move(data)};
}

void WeightArchive::add(const std::string& name, const Tensor& t) {
    std::vector<float> data(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) data[i] = float(t[i]);
    add(name, t.shape(), std::move(data));
}

const WeightArchive::Entry& WeightArchive::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw DataError("archive has no entry '" + name + "'");
    return it->second;
}

void WeightArchive::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    json index;
    index["format_version"] = format_version;
    index["source"] = source_tag;
    json tensors = json::object();

    std::ofstream bin(dir / "weights.bin", std::ios::binary);
    if (!bin) throw DataError("cannot write " + (dir / "weights.bin").string());
    std::size_t offset = 0;
    for (const auto& [name, entry] : entries_) {
        const std::size_t bytes = entry.data.size() * sizeof(float);
        bin.write(reinterpret_cast<const char*>(entry.data.data()),
                  std::streamsize(bytes));
        tensors[name] = {{"shape", entry.shape},
                         {"dtype", "float32"},
                         {"offset", offset},
                         {"length", bytes}};
        offset += bytes;
    }
    bin.close();
    if (!bin) throw DataError("short write to " + (dir / "weights.bin").string());

    index["tensors"] = std::move(tensors);
    std::ofstream idx(dir / "index.json");
    if (!idx) throw DataError("cannot write " + (dir / "index.json").string());
    idx << index.dump(2) << '\n';
}

WeightArchive WeightArchive::load(const std::filesystem::path& dir) {
    std::ifstream idx(dir / "index.json");
    if (!idx) throw DataError("cannot open " + (dir / "index.json").string());
    json index;
    try {
        idx >> index;
    } catch (const json::exception& e) {
        throw DataError("malformed index.json in " + dir.string() + ": " + e.what());
    }

    std::ifstream bin(dir / "weights.bin", std::ios::binary);
    if (!bin) throw DataError("cannot open " + (dir / "weights.bin").string());

    WeightArchive archive;
    archive.format_version = index.value("format_version", 1);
    archive.source_tag = index.value("source", std::string());
    for (const auto& [name, meta] : index.at("tensors").items()) {
        Entry entry;
        entry.shape = meta.at("shape").get<std::vector<int>>();
        const std::size_t offset = meta.at("offset").get<std::size_t>();
        const std::size_t length = meta.at("length").get<std::size_t>();
        if (length % sizeof(float) != 0)
            throw DataError("archive entry '" + name + "': byte length not float-sized");
        entry.data.resize(length / sizeof(float));
        bin.seekg(std::streamoff(offset));
        bin.read(reinterpret_cast<char*>(entry.data.data()), std::streamsize(length));
        if (!bin)
            throw DataError("archive entry '" + name + "': truncated weights.bin");
        if (Tensor::numel_of(entry.shape) != entry.data.size())
            throw DataError("archive entry '" + name + "': shape/payload mismatch");
        archive.entries_[name] = std::move(entry);
    }
    return archive;
}

WeightArchive WeightArchive::from_named_tensors(const std::vector<nn::NamedTensor>& tensors,
                                                const std::string& source_tag) {
    WeightArchive archive;
    archive.source_tag = source_tag;
    for (const auto& nt : tensors) archive.add(nt.name, *nt.tensor);
    return archive;
}

namespace {

void copy_entry(const WeightArchive::Entry& src, const std::string& name, Tensor& dst) {
    if (src.shape != dst.shape())
        throw DataError("tensor '" + name + "': archive shape " +
                        Tensor::shape_str(src.shape) + " does not match model shape " +
                        dst.shape_str());
    for (std::size_t i = 0; i < src.data.size(); ++i) dst[i] = double(src.data[i]);
}

} // namespace

int load_pretrained(Backbone& backbone, const WeightArchive& archive) {
    if (!backbone.config().channel_scale.is_one())
        throw ConfigError("pretrained loading requires channel_scale = 1 (got " +
                          backbone.config().channel_scale.str() + ")");
    const std::string& prefix = backbone.name_prefix();
    auto tensors = backbone.named_tensors();

    std::string missing;
    for (const auto& nt : tensors) {
        const std::string key = nt.name.substr(prefix.size());
        if (!archive.contains(key)) missing += missing.empty() ? key : ", " + key;
    }
    if (!missing.empty())
        throw DataError("archive is missing backbone tensors: " + missing);

    for (auto& nt : tensors)
        copy_entry(archive.at(nt.name.substr(prefix.size())), nt.name, *nt.tensor);
    return int(tensors.size());
}

int load_named_tensors_exact(std::vector<nn::NamedTensor> tensors,
                             const WeightArchive& archive, const std::string& what) {
    std::string missing;
    for (const auto& nt : tensors)
        if (!archive.contains(nt.name)) missing += missing.empty() ? nt.name : ", " + nt.name;
    if (!missing.empty())
        throw DataError(what + ": archive is missing tensors: " + missing);
    if (archive.size() != tensors.size()) {
        std::string extra;
        for (const auto& [name, _] : archive.entries()) {
            bool known = false;
            for (const auto& nt : tensors)
                if (nt.name == name) {
                    known = true;
                    break;
                }
            if (!known) extra += extra.empty() ? name : ", " + name;
        }
        throw DataError(what + ": archive has unexpected tensors: " + extra);
    }
    for (auto& nt : tensors) copy_entry(archive.at(nt.name), nt.name, *nt.tensor);
    return int(tensors.size());
}

} // namespace drc
