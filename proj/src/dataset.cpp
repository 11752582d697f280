#include "dla/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dla/init.hpp"

namespace dla {

void DatasetSpec::validate() const {
    if (classes < 2) throw ConfigError("dataset: need at least two classes");
    if (classes > pattern_library_size())
        throw ConfigError("dataset: " + std::to_string(classes) + " classes exceed the pattern library (" +
                          std::to_string(pattern_library_size()) + ")");
    if (n_train < 1 || n_test < 1) throw ConfigError("dataset: empty split");
    if (height < 8 || width < 8) throw ConfigError("dataset: resolution must be at least 8x8");
    if (channels < 1) throw ConfigError("dataset: channels must be >= 1");
    if (noise < 0.0) throw ConfigError("dataset: negative noise level");
}

namespace {

constexpr double kBrightness[3] = {0.8, 0.9, 1.0};
constexpr double kChannelMix[3] = {1.0, 0.9, 0.8};
constexpr double kHi = 0.85;
constexpr double kLo = 0.2;

struct PatternClass {
    int base_variants;
    // value in [0,1] at (x, y) for a given base variant
    double (*sample)(int variant, int x, int y, int w, int h);
};

double bars_v4(int v, int x, int, int, int) { return ((x + v) % 4) < 2 ? kHi : kLo; }
double bars_h4(int v, int, int y, int, int) { return ((y + v) % 4) < 2 ? kHi : kLo; }
double bars_v8(int v, int x, int, int, int) { return ((x + v) % 8) < 4 ? kHi : kLo; }
double bars_h8(int v, int, int y, int, int) { return ((y + v) % 8) < 4 ? kHi : kLo; }
double bars_diag(int v, int x, int y, int, int) {
    const int phase = v % 8;
    const int axis = (v / 8 == 0) ? x + y : x - y + 64;  // both orientations occur, flip-symmetric
    return ((axis + phase) % 8) < 4 ? kHi : kLo;
}
double checker2(int v, int x, int y, int, int) {
    const int ox = v % 2, oy = v / 2;
    return (((x + ox) / 2 + (y + oy) / 2) % 2) ? kHi : kLo;
}
double checker4(int v, int x, int y, int, int) {
    const int ox = v % 4, oy = v / 4;
    return (((x + ox) / 4 + (y + oy) / 4) % 2) ? kHi : kLo;
}
double rings(int v, int x, int y, int w, int h) {
    const double cx = (w - 1) / 2.0 + (v % 5) - 2;
    const double cy = (h - 1) / 2.0 + (v / 5) - 2;
    const double r = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy));
    return (static_cast<int>(std::lround(r)) % 6) < 3 ? kHi : kLo;
}
double radial(int v, int x, int y, int w, int h) {
    const double cx = (w - 1) / 2.0 + (v % 5) - 2;
    const double cy = (h - 1) / 2.0 + (v / 5) - 2;
    const double r = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy));
    const double t = std::max(0.0, 1.0 - r / 12.0);
    return kLo + (kHi - kLo) * t;
}
double ramp_x(int v, int x, int, int w, int) {
    const double t = static_cast<double>(x) / (w - 1);
    return kLo + (kHi - kLo) * (v == 0 ? t : 1.0 - t);
}

const PatternClass kPatterns[] = {
    {4, bars_v4},  {4, bars_h4},   {8, bars_v8},  {8, bars_h8}, {16, bars_diag},
    {4, checker2}, {16, checker4}, {25, rings},   {25, radial}, {2, ramp_x},
};

uint8_t quantize(double value) {
    const double v = std::lround(value);
    return static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
}

}  // namespace

int pattern_library_size() { return static_cast<int>(std::size(kPatterns)); }

int pattern_variant_count(int class_id) {
    if (class_id < 0 || class_id >= pattern_library_size())
        throw ConfigError("pattern class " + std::to_string(class_id) + " out of range");
    return kPatterns[class_id].base_variants * 3;
}

std::vector<uint8_t> render_pattern(int class_id, int variant, int channels, int height, int width) {
    if (variant < 0 || variant >= pattern_variant_count(class_id))
        throw ConfigError("pattern variant " + std::to_string(variant) + " out of range for class " +
                          std::to_string(class_id));
    const PatternClass& pattern = kPatterns[class_id];
    const double bright = kBrightness[variant % 3];
    const int base = variant / 3;
    std::vector<uint8_t> out(static_cast<size_t>(channels) * height * width);
    for (int c = 0; c < channels; ++c) {
        const double mix = kChannelMix[c % 3] * bright;
        uint8_t* plane = out.data() + static_cast<size_t>(c) * height * width;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                plane[static_cast<size_t>(y) * width + x] =
                    quantize(255.0 * mix * pattern.sample(base, x, y, width, height));
    }
    return out;
}

namespace {

Dataset make_split(const DatasetSpec& spec, int count, Rng& rng) {
    Dataset data;
    data.channels = spec.channels;
    data.height = spec.height;
    data.width = spec.width;
    data.classes = spec.classes;
    data.labels.reserve(static_cast<size_t>(count));

    // stratified label multiset, then a seeded shuffle
    std::vector<uint8_t> labels;
    labels.reserve(static_cast<size_t>(count));
    for (int k = 0; k < spec.classes; ++k) {
        const int n = count / spec.classes + (k < count % spec.classes ? 1 : 0);
        labels.insert(labels.end(), static_cast<size_t>(n), static_cast<uint8_t>(k));
    }
    for (size_t i = labels.size(); i > 1; --i)
        std::swap(labels[i - 1], labels[rng.integer(i)]);

    data.images.reserve(static_cast<size_t>(count) * data.sample_bytes());
    for (uint8_t label : labels) {
        const int variant = static_cast<int>(rng.integer(static_cast<uint64_t>(pattern_variant_count(label))));
        std::vector<uint8_t> img = render_pattern(label, variant, spec.channels, spec.height, spec.width);
        if (spec.noise > 0.0)
            for (uint8_t& px : img)
                px = quantize(static_cast<double>(px) + rng.normal(0.0, spec.noise * 255.0));
        data.images.insert(data.images.end(), img.begin(), img.end());
        data.labels.push_back(label);
    }
    return data;
}

void write_u32(std::ostream& out, uint32_t v) {
    unsigned char buf[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                            static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

uint32_t read_u32(std::istream& in, const char* section, long& offset) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (in.gcount() != 4)
        throw FormatError(std::string("dataset truncated at byte ") + std::to_string(offset) +
                          ": missing " + section);
    offset += 4;
    return static_cast<uint32_t>(buf[0]) | (static_cast<uint32_t>(buf[1]) << 8) |
           (static_cast<uint32_t>(buf[2]) << 16) | (static_cast<uint32_t>(buf[3]) << 24);
}

}  // namespace

std::pair<Dataset, Dataset> generate_synthetic(const DatasetSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Dataset train = make_split(spec, spec.n_train, rng);
    Dataset test = make_split(spec, spec.n_test, rng);
    return {std::move(train), std::move(test)};
}

void save_dataset(const std::string& path, const Dataset& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("dataset: cannot open '" + path + "' for writing");
    out.write("DLAD", 4);
    write_u32(out, 1);  // version
    write_u32(out, static_cast<uint32_t>(data.count()));
    write_u32(out, static_cast<uint32_t>(data.channels));
    write_u32(out, static_cast<uint32_t>(data.height));
    write_u32(out, static_cast<uint32_t>(data.width));
    write_u32(out, static_cast<uint32_t>(data.classes));
    out.write(reinterpret_cast<const char*>(data.images.data()),
              static_cast<std::streamsize>(data.images.size()));
    out.write(reinterpret_cast<const char*>(data.labels.data()),
              static_cast<std::streamsize>(data.labels.size()));
    if (!out) throw FormatError("dataset: write failed for '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("dataset: cannot open '" + path + "'");
    long offset = 0;
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::string(magic, 4) != "DLAD")
        throw FormatError("dataset: bad magic at byte 0, want \"DLAD\"");
    offset += 4;
    const uint32_t version = read_u32(in, "version", offset);
    if (version != 1) throw FormatError("dataset: unsupported version " + std::to_string(version));
    const uint32_t count = read_u32(in, "sample count", offset);
    Dataset data;
    data.channels = static_cast<int>(read_u32(in, "channel count", offset));
    data.height = static_cast<int>(read_u32(in, "height", offset));
    data.width = static_cast<int>(read_u32(in, "width", offset));
    data.classes = static_cast<int>(read_u32(in, "class count", offset));
    if (data.channels <= 0 || data.height <= 0 || data.width <= 0 || data.classes <= 0)
        throw FormatError("dataset: non-positive header field before byte " + std::to_string(offset));

    const long image_bytes = static_cast<long>(count) * data.sample_bytes();
    data.images.resize(static_cast<size_t>(image_bytes));
    in.read(reinterpret_cast<char*>(data.images.data()), image_bytes);
    if (in.gcount() != image_bytes)
        throw FormatError("dataset truncated at byte " + std::to_string(offset + in.gcount()) +
                          ": missing image block");
    offset += image_bytes;

    data.labels.resize(count);
    in.read(reinterpret_cast<char*>(data.labels.data()), count);
    if (in.gcount() != static_cast<std::streamsize>(count))
        throw FormatError("dataset truncated at byte " + std::to_string(offset + in.gcount()) +
                          ": missing label block");
    for (uint8_t label : data.labels)
        if (label >= data.classes)
            throw FormatError("dataset: label " + std::to_string(label) + " out of range");
    return data;
}

}  // namespace dla
