#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "drc/common.hpp"

namespace drc {

// One chest X-ray sample: stable id, file path, class label, source cohort.
struct ImageSampleRef {
    std::string id;
    std::string path;
    std::string label;
    std::string source; // source1 | source2 | source3
};

struct DatasetManifest {
    std::string name;
    std::vector<std::string> classes; // ordered vocabulary
    std::vector<ImageSampleRef> samples;
    std::uint64_t seed = 0;

    int class_index(const std::string& label) const;
};

enum class DatasetName { DXR1, DXR2, DXR3, DXR4 };

std::string to_string(DatasetName n);
DatasetName dataset_name_from_string(const std::string& s);

// Roots of the three source cohorts; each holds one subdirectory per class
// (covid / pneumonia / tb / healthy) of PNG/JPEG/PGM files.
struct SourceDirs {
    std::filesystem::path source1;
    std::filesystem::path source2;
    std::filesystem::path source3;

    const std::filesystem::path& at(const std::string& source) const;
};

// Composes the named dataset with its exact per-class recipe counts, randomly
// subsampling each class listing (sorted before shuffling, so directory
// enumeration order is irrelevant). Errors name the undersupplied class and
// the shortfall.
DatasetManifest compose_dataset(DatasetName name, const SourceDirs& dirs,
                                std::uint64_t seed);

struct SplitFold {
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
};

struct SplitPlan {
    std::vector<SplitFold> folds;
    double train_fraction = 0.7;
    std::uint64_t seed = 0;
};

// Repeated random subsampling: every fold is an independent shuffle + prefix
// split. Folds overlap with each other; within a fold, train and test are
// disjoint and exhaustive. The test side takes round-half-up((1-f)*N) ids.
SplitPlan monte_carlo_split(const DatasetManifest& manifest, int folds,
                            double train_fraction, std::uint64_t seed,
                            bool stratified = false);

std::map<std::string, int> class_counts(const DatasetManifest& manifest);
std::map<std::string, int> class_counts(const DatasetManifest& manifest,
                                        const std::vector<std::string>& ids);

// Manifest CSV: header `id,path,label,source`, UTF-8, LF. Split files:
// `fold<k>_train.csv` / `fold<k>_test.csv`, one id per line.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_split(const std::filesystem::path& dir, const SplitPlan& plan);
SplitPlan read_split(const std::filesystem::path& dir, int folds);

} // namespace drc
