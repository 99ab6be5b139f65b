#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "drc/backbones.hpp"
#include "drc/tensor.hpp"

namespace drc {

// Flat named-tensor container. On disk: `index.json` describing each entry
// (shape, dtype, byte offset/length into `weights.bin`) plus the raw
// little-endian float32 payload, concatenated row-major in name order.
class WeightArchive {
public:
    struct Entry {
        std::vector<int> shape;
        std::vector<float> data;
    };

    std::string source_tag;
    int format_version = 1;

    void add(const std::string& name, std::vector<int> shape, std::vector<float> data);
    void add(const std::string& name, const Tensor& t);

    bool contains(const std::string& name) const { return entries_.count(name) > 0; }
    const Entry& at(const std::string& name) const;
    const std::map<std::string, Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    void save(const std::filesystem::path& dir) const;
    static WeightArchive load(const std::filesystem::path& dir);

    static WeightArchive from_named_tensors(const std::vector<nn::NamedTensor>& tensors,
                                            const std::string& source_tag);

private:
    std::map<std::string, Entry> entries_;
};

// Replaces every backbone tensor (weights, norm parameters, running
// statistics) with archive values; the backbone's own name prefix is stripped
// before lookup, and archive entries that match no backbone tensor (e.g. a
// classification head) are ignored. Returns the number of tensors loaded.
int load_pretrained(Backbone& backbone, const WeightArchive& archive);

// Strict variant for model checkpoints: every named tensor must be covered
// and no archive entry may be left over.
int load_named_tensors_exact(std::vector<nn::NamedTensor> tensors,
                             const WeightArchive& archive, const std::string& what);

} // namespace drc
