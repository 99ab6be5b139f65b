#include "drc/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "drc/rng.hpp"

namespace drc {

namespace fs = std::filesystem;

int DatasetManifest::class_index(const std::string& label) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
        if (classes[i] == label) return int(i);
    throw DataError("label '" + label + "' not in the class vocabulary of " + name);
}

std::string to_string(DatasetName n) {
    switch (n) {
    case DatasetName::DXR1: return "DXR1";
    case DatasetName::DXR2: return "DXR2";
    case DatasetName::DXR3: return "DXR3";
    case DatasetName::DXR4: return "DXR4";
    }
    return "?";
}

DatasetName dataset_name_from_string(const std::string& s) {
    if (s == "DXR1") return DatasetName::DXR1;
    if (s == "DXR2") return DatasetName::DXR2;
    if (s == "DXR3") return DatasetName::DXR3;
    if (s == "DXR4") return DatasetName::DXR4;
    throw ConfigError("unknown dataset name '" + s + "' (expected DXR1..DXR4)");
}

const fs::path& SourceDirs::at(const std::string& source) const {
    if (source == "source1") return source1;
    if (source == "source2") return source2;
    if (source == "source3") return source3;
    throw ConfigError("unknown source tag '" + source + "'");
}

namespace {

bool image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    for (char& c : ext) c = char(std::tolower(static_cast<unsigned char>(c)));
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".pgm" ||
           ext == ".ppm" || ext == ".pnm";
}

// Sorted listing of <source>/<cls>; sorting makes composition independent of
// directory enumeration order.
std::vector<std::string> list_class_dir(const fs::path& source_dir, const std::string& cls) {
    const fs::path dir = source_dir / cls;
    std::vector<std::string> files;
    if (!fs::exists(dir)) return files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && image_file(entry.path()))
            files.push_back(entry.path().filename().string());
    std::sort(files.begin(), files.end());
    return files;
}

// One recipe line: draw `count` images of class `cls` from `source`.
struct RecipePart {
    std::string cls;
    std::string source;
    int count;
};

struct Recipe {
    std::vector<std::string> classes;
    std::vector<RecipePart> parts;
};

Recipe recipe_for(DatasetName name) {
    switch (name) {
    case DatasetName::DXR1:
        return {{"pneumonia", "healthy"},
                {{"pneumonia", "source1", 3883}, {"healthy", "source1", 1350}}};
    case DatasetName::DXR2:
        return {{"covid", "pneumonia", "healthy"},
                {{"covid", "source2", 69},
                 {"pneumonia", "source2", 79},
                 {"healthy", "source2", 79}}};
    case DatasetName::DXR3:
        return {{"covid", "pneumonia", "tb", "healthy"},
                {{"covid", "source2", 69},
                 {"pneumonia", "source2", 79},
                 {"tb", "source3", 79},
                 {"healthy", "source2", 79}}};
    case DatasetName::DXR4:
        return {{"covid", "pneumonia", "tb", "healthy"},
                {{"covid", "source2", 69},
                 {"pneumonia", "source2", 79},
                 {"pneumonia", "source1", 221},
                 {"tb", "source3", 310},
                 {"healthy", "source1", 110},
                 {"healthy", "source2", 110},
                 {"healthy", "source3", 110}}};
    }
    throw ConfigError("bad dataset name");
}

} // namespace

DatasetManifest compose_dataset(DatasetName name, const SourceDirs& dirs,
                                std::uint64_t seed) {
    const Recipe recipe = recipe_for(name);
    DatasetManifest manifest;
    manifest.name = to_string(name);
    manifest.classes = recipe.classes;
    manifest.seed = seed;

    // Group the recipe by class so a shortfall in one source can be topped up
    // from that class's other sources (the class total is the contract).
    for (const std::string& cls : recipe.classes) {
        struct Pool {
            std::string source;
            std::vector<std::string> files; // shuffled
            int target = 0;
            std::size_t used = 0;
        };
        std::vector<Pool> pools;
        int class_total = 0;
        for (const RecipePart& part : recipe.parts) {
            if (part.cls != cls) continue;
            Pool pool;
            pool.source = part.source;
            pool.target = part.count;
            pool.files = list_class_dir(dirs.at(part.source), cls);
            Rng rng(fan_out(seed, "compose." + manifest.name + "." + cls + "." + part.source));
            rng.shuffle(pool.files);
            class_total += part.count;
            pools.push_back(std::move(pool));
        }

        int taken_total = 0;
        auto take = [&](Pool& pool, int want) {
            const int got = int(std::min<std::size_t>(std::size_t(want),
                                                      pool.files.size() - pool.used));
            for (int i = 0; i < got; ++i) {
                const std::string& file = pool.files[pool.used++];
                ImageSampleRef s;
                s.source = pool.source;
                s.label = cls;
                s.path = (dirs.at(pool.source) / cls / file).string();
                s.id = pool.source + "/" + cls + "/" + file;
                manifest.samples.push_back(std::move(s));
            }
            taken_total += got;
            return got;
        };

        for (Pool& pool : pools) take(pool, pool.target);
        // Top up a per-source shortfall from sibling pools, in recipe order.
        for (Pool& pool : pools) {
            if (taken_total >= class_total) break;
            take(pool, class_total - taken_total);
        }
        if (taken_total < class_total)
            throw DataError("compose " + manifest.name + ": class '" + cls + "' is short " +
                            std::to_string(class_total - taken_total) + " of " +
                            std::to_string(class_total) + " images");
    }

    std::set<std::string> ids;
    for (const auto& s : manifest.samples)
        if (!ids.insert(s.id).second)
            throw DataError("compose " + manifest.name + ": duplicate sample id " + s.id);
    return manifest;
}

SplitPlan monte_carlo_split(const DatasetManifest& manifest, int folds,
                            double train_fraction, std::uint64_t seed, bool stratified) {
    if (folds < 1) throw ConfigError("folds must be >= 1");
    if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
        throw ConfigError("train_fraction must lie in (0, 1)");
    const std::size_t n = manifest.samples.size();
    if (n < 2) throw ConfigError("need at least 2 samples to split");

    auto split_ids = [&](std::vector<std::string> ids, Rng& rng, SplitFold& fold) {
        const std::size_t total = ids.size();
        const std::size_t n_test =
            std::size_t(std::floor((1.0 - train_fraction) * double(total) + 0.5));
        const std::size_t n_train = total - n_test;
        if (n_test == 0 || n_train == 0)
            throw ConfigError("train_fraction " + std::to_string(train_fraction) +
                              " leaves an empty train or test side for " +
                              std::to_string(total) + " samples");
        rng.shuffle(ids);
        fold.train_ids.insert(fold.train_ids.end(), ids.begin(),
                              ids.begin() + std::ptrdiff_t(n_train));
        fold.test_ids.insert(fold.test_ids.end(), ids.begin() + std::ptrdiff_t(n_train),
                             ids.end());
    };

    SplitPlan plan;
    plan.train_fraction = train_fraction;
    plan.seed = seed;
    for (int k = 0; k < folds; ++k) {
        SplitFold fold;
        Rng rng(fan_out(seed, "split", std::uint64_t(k)));
        if (!stratified) {
            std::vector<std::string> ids;
            ids.reserve(n);
            for (const auto& s : manifest.samples) ids.push_back(s.id);
            split_ids(std::move(ids), rng, fold);
        } else {
            for (const std::string& cls : manifest.classes) {
                std::vector<std::string> ids;
                for (const auto& s : manifest.samples)
                    if (s.label == cls) ids.push_back(s.id);
                if (!ids.empty()) split_ids(std::move(ids), rng, fold);
            }
        }
        plan.folds.push_back(std::move(fold));
    }
    return plan;
}

std::map<std::string, int> class_counts(const DatasetManifest& manifest) {
    std::map<std::string, int> counts;
    for (const auto& cls : manifest.classes) counts[cls] = 0;
    for (const auto& s : manifest.samples) ++counts[s.label];
    return counts;
}

std::map<std::string, int> class_counts(const DatasetManifest& manifest,
                                        const std::vector<std::string>& ids) {
    std::map<std::string, std::string> label_of;
    for (const auto& s : manifest.samples) label_of[s.id] = s.label;
    std::map<std::string, int> counts;
    for (const auto& cls : manifest.classes) counts[cls] = 0;
    for (const auto& id : ids) {
        auto it = label_of.find(id);
        if (it == label_of.end()) throw DataError("unknown sample id '" + id + "'");
        ++counts[it->second];
    }
    return counts;
}

namespace {

void check_csv_field(const std::string& v, const char* what) {
    if (v.find(',') != std::string::npos || v.find('\n') != std::string::npos)
        throw DataError(std::string(what) + " '" + v + "' contains CSV delimiters");
}

} // namespace

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
    std::ofstream out(path, std::ios::binary); // LF line endings everywhere
    if (!out) throw DataError("cannot write " + path.string());
    out << "id,path,label,source\n";
    for (const auto& s : manifest.samples) {
        check_csv_field(s.id, "id");
        check_csv_field(s.path, "path");
        out << s.id << ',' << s.path << ',' << s.label << ',' << s.source << '\n';
    }
}

DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "id,path,label,source")
        throw DataError("manifest " + path.string() + ": bad header");
    DatasetManifest manifest;
    manifest.name = path.stem().string();
    std::set<std::string> seen_ids;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ImageSampleRef s;
        std::size_t a = line.find(',');
        std::size_t b = a == std::string::npos ? a : line.find(',', a + 1);
        std::size_t c = b == std::string::npos ? b : line.find(',', b + 1);
        if (c == std::string::npos)
            throw DataError("manifest " + path.string() + ": malformed row '" + line + "'");
        s.id = line.substr(0, a);
        s.path = line.substr(a + 1, b - a - 1);
        s.label = line.substr(b + 1, c - b - 1);
        s.source = line.substr(c + 1);
        if (!seen_ids.insert(s.id).second)
            throw DataError("manifest " + path.string() + ": duplicate id " + s.id);
        if (std::find(manifest.classes.begin(), manifest.classes.end(), s.label) ==
            manifest.classes.end())
            manifest.classes.push_back(s.label);
        manifest.samples.push_back(std::move(s));
    }
    if (manifest.samples.empty())
        throw DataError("manifest " + path.string() + " has no samples");
    return manifest;
}

void write_split(const fs::path& dir, const SplitPlan& plan) {
    fs::create_directories(dir);
    for (std::size_t k = 0; k < plan.folds.size(); ++k) {
        for (const char* side : {"train", "test"}) {
            const auto& ids = side == std::string("train") ? plan.folds[k].train_ids
                                                           : plan.folds[k].test_ids;
            const fs::path p =
                dir / ("fold" + std::to_string(k) + "_" + side + ".csv");
            std::ofstream out(p, std::ios::binary);
            if (!out) throw DataError("cannot write " + p.string());
            for (const auto& id : ids) out << id << '\n';
        }
    }
}

SplitPlan read_split(const fs::path& dir, int folds) {
    SplitPlan plan;
    for (int k = 0; k < folds; ++k) {
        SplitFold fold;
        for (const char* side : {"train", "test"}) {
            const fs::path p =
                dir / ("fold" + std::to_string(k) + "_" + side + ".csv");
            std::ifstream in(p, std::ios::binary);
            if (!in) throw DataError("cannot open " + p.string());
            std::string line;
            auto& ids =
                side == std::string("train") ? fold.train_ids : fold.test_ids;
            while (std::getline(in, line))
                if (!line.empty()) ids.push_back(line);
        }
        plan.folds.push_back(std::move(fold));
    }
    return plan;
}

} // namespace drc
