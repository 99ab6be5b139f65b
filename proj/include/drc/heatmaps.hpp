#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "drc/fusion.hpp"
#include "drc/tensor.hpp"

namespace drc {

// The ten named layers the analysis exposes, in pipeline order.
const std::vector<std::string>& heatmap_layer_names();

// Per-layer 2-D activation maps for one input image: channel-wise mean of
// absolute activations, min-max normalized to [0,1] (constant maps become all
// zeros), bilinearly upsampled to the input resolution.
struct HeatmapStack {
    std::string image_id;
    std::vector<std::pair<std::string, Tensor>> maps;

    const Tensor& at(const std::string& layer) const; // error lists valid names
};

// image: one preprocessed (input,input,3) tensor.
HeatmapStack extract_heatmaps(FusionModel& model, const Tensor& image,
                              const std::string& image_id = "");

struct CircleAnnotation {
    double cx = 0.0; // pixels, input coordinates
    double cy = 0.0;
    double radius = 0.0;
    std::string label;
};

struct CircleCheckResult {
    bool detected = false;
    double mean_inside = 0.0;
};

// Mean of the map over pixels inside the circle; detected iff strictly above
// the 0.5 threshold. A circle with no pixels inside the image is an input
// error.
CircleCheckResult circle_check(const Tensor& map, const CircleAnnotation& circle);

// Blends the grayscale image (in [0,1]) with a hot-colormapped heatmap at
// alpha 0.5 and writes a PNG with the deterministic encoder.
void render_overlay(const Tensor& gray_image, const Tensor& map,
                    const std::filesystem::path& out_path);

// annotations.json: [{"image_id", "cx", "cy", "r", "label"}, ...]
std::map<std::string, std::vector<CircleAnnotation>>
read_annotations(const std::filesystem::path& path);

} // namespace drc
