#include "drc/heatmaps.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "drc/image_io.hpp"
#include "drc/preprocess.hpp"

namespace drc {

const std::vector<std::string>& heatmap_layer_names() {
    static const std::vector<std::string> names{
        "new56", "new28",  "new14",    "new7",     "convA",
        "convB", "convC",  "a_concat", "b_concat", "global_concat"};
    return names;
}

const Tensor& HeatmapStack::at(const std::string& layer) const {
    for (const auto& [name, map] : maps)
        if (name == layer) return map;
    std::string valid;
    for (const auto& name : heatmap_layer_names())
        valid += valid.empty() ? name : ", " + name;
    throw DataError("unknown heatmap layer '" + layer + "' (valid: " + valid + ")");
}

namespace {

// (1,h,w,c) activations -> channel mean of |.|, min-max scaled, upsampled.
Tensor reduce_map(const Tensor& act, int out_size) {
    const int h = act.dim(1), w = act.dim(2), c = act.dim(3);
    Tensor flat({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int ch = 0; ch < c; ++ch) s += std::abs(act.at(0, y, x, ch));
            flat.at(y, x) = s / double(c);
        }
    const double lo = flat.min(), hi = flat.max();
    if (hi - lo < 1e-300) {
        flat.fill(0.0); // constant map -> all zeros
    } else {
        for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = (flat[i] - lo) / (hi - lo);
    }
    return resize_bilinear(flat, out_size, out_size);
}

} // namespace

HeatmapStack extract_heatmaps(FusionModel& model, const Tensor& image,
                              const std::string& image_id) {
    if (image.rank() != 3 || image.dim(2) != 3)
        throw ShapeError("extract_heatmaps: expected one (size,size,3) image, got " +
                         image.shape_str());
    const int size = model.input_size();
    Tensor batch({1, size, size, 3});
    if (image.dim(0) != size || image.dim(1) != size)
        throw ShapeError("extract_heatmaps: image " + image.shape_str() +
                         " does not match model input size " + std::to_string(size));
    for (std::size_t i = 0; i < image.size(); ++i) batch[i] = image[i];

    nn::Tape tape(false);
    ForwardTrace trace;
    model.forward_traced(tape, tape.leaf(std::move(batch)), /*training=*/false, &trace);

    HeatmapStack stack;
    stack.image_id = image_id;
    for (const auto& name : heatmap_layer_names()) {
        const Tensor* act = nullptr;
        for (const auto& [n, m] : trace.maps)
            if (n == name) act = &m;
        if (!act) throw NumericError("forward trace is missing layer " + name);
        stack.maps.emplace_back(name, reduce_map(*act, size));
    }
    return stack;
}

CircleCheckResult circle_check(const Tensor& map, const CircleAnnotation& circle) {
    if (map.rank() != 2 || map.size() == 0)
        throw ShapeError("circle_check: expected a 2-D map, got " + map.shape_str());
    if (circle.radius <= 0.0) throw ConfigError("circle radius must be positive");
    const int h = map.dim(0), w = map.dim(1);
    const double r2 = circle.radius * circle.radius;
    double sum = 0.0;
    long long count = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double dx = x - circle.cx, dy = y - circle.cy;
            if (dx * dx + dy * dy <= r2) {
                sum += map.at(y, x);
                ++count;
            }
        }
    if (count == 0)
        throw DataError("circle at (" + std::to_string(circle.cx) + "," +
                        std::to_string(circle.cy) + ") r=" + std::to_string(circle.radius) +
                        " lies entirely outside the " + std::to_string(w) + "x" +
                        std::to_string(h) + " map");
    CircleCheckResult result;
    result.mean_inside = sum / double(count);
    result.detected = result.mean_inside > 0.5; // strict
    return result;
}

namespace {

// Hot colormap: black -> red -> yellow -> white; black at zero keeps the
// zero-map overlay equal to the half-intensity grayscale.
void hot_rgb(double t, double rgb[3]) {
    rgb[0] = std::clamp(3.0 * t, 0.0, 1.0);
    rgb[1] = std::clamp(3.0 * t - 1.0, 0.0, 1.0);
    rgb[2] = std::clamp(3.0 * t - 2.0, 0.0, 1.0);
}

} // namespace

void render_overlay(const Tensor& gray_image, const Tensor& map,
                    const std::filesystem::path& out_path) {
    if (gray_image.rank() != 2 || map.rank() != 2)
        throw ShapeError("render_overlay: expected 2-D image and map");
    if (!gray_image.same_shape(map))
        throw ShapeError("render_overlay: image " + gray_image.shape_str() +
                         " vs map " + map.shape_str());
    const int h = gray_image.dim(0), w = gray_image.dim(1);
    std::vector<std::uint8_t> rgb(std::size_t(h) * std::size_t(w) * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double g = std::clamp(gray_image.at(y, x), 0.0, 1.0);
            double cm[3];
            hot_rgb(std::clamp(map.at(y, x), 0.0, 1.0), cm);
            for (int c = 0; c < 3; ++c) {
                const double v = 0.5 * g + 0.5 * cm[c];
                rgb[(std::size_t(y) * std::size_t(w) + std::size_t(x)) * 3 + std::size_t(c)] =
                    std::uint8_t(std::lround(v * 255.0));
            }
        }
    write_png_rgb8(out_path, rgb.data(), w, h);
}

std::map<std::string, std::vector<CircleAnnotation>>
read_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed annotations " + path.string() + ": " + e.what());
    }
    if (!j.is_array()) throw DataError("annotations must be a JSON array");
    std::map<std::string, std::vector<CircleAnnotation>> out;
    for (const auto& item : j) {
        CircleAnnotation c;
        c.cx = item.at("cx").get<double>();
        c.cy = item.at("cy").get<double>();
        c.radius = item.at("r").get<double>();
        c.label = item.value("label", std::string());
        if (c.radius <= 0.0)
            throw DataError("annotation for '" + item.at("image_id").get<std::string>() +
                            "' has nonpositive radius");
        out[item.at("image_id").get<std::string>()].push_back(std::move(c));
    }
    return out;
}

} // namespace drc
