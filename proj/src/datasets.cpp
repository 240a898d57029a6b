#include "osr/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "osr/errors.hpp"

namespace osr {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// ImageSet
// ---------------------------------------------------------------------------

LabeledImage ImageSet::at(int i) const {
    if (i < 0 || i >= count()) throw std::invalid_argument("ImageSet::at: index out of range");
    const int h = images.dim(1), w = images.dim(2), c = images.dim(3);
    nn::Tensor px({h, w, c});
    const std::int64_t n = px.size();
    std::memcpy(px.data(), images.data() + static_cast<std::int64_t>(i) * n, static_cast<std::size_t>(n) * sizeof(double));
    return LabeledImage{std::move(px), labels[static_cast<std::size_t>(i)]};
}

nn::Tensor ImageSet::gather(std::span<const int> indices) const {
    const int h = images.rank() == 4 ? images.dim(1) : 0;
    const int w = images.rank() == 4 ? images.dim(2) : 0;
    const int c = images.rank() == 4 ? images.dim(3) : 0;
    nn::Tensor batch({static_cast<int>(indices.size()), h, w, c});
    const std::int64_t stride = static_cast<std::int64_t>(h) * w * c;
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const int i = indices[k];
        if (i < 0 || i >= count()) throw std::invalid_argument("ImageSet::gather: index out of range");
        std::memcpy(batch.data() + static_cast<std::int64_t>(k) * stride, images.data() + i * stride,
                    static_cast<std::size_t>(stride) * sizeof(double));
    }
    return batch;
}

std::vector<int> ImageSet::distinct_labels() const {
    std::vector<int> out = labels;
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Openness and splits
// ---------------------------------------------------------------------------

double openness(int c_tr, int c_te, int c_r) {
    if (c_tr < 1 || c_te < 1 || c_r < 1) throw std::invalid_argument("openness: class counts must be >= 1");
    return 1.0 - std::sqrt(2.0 * c_tr / (static_cast<double>(c_te) + c_r));
}

void OpenSetSplit::validate() const {
    if (known_class_ids.empty()) throw std::invalid_argument("split: no known classes");
    for (int id : known_class_ids)
        if (std::find(unknown_class_ids.begin(), unknown_class_ids.end(), id) != unknown_class_ids.end())
            throw std::invalid_argument("split: class " + std::to_string(id) + " is both known and unknown");
    if (c_tr != static_cast<int>(known_class_ids.size())) throw std::invalid_argument("split: c_tr count mismatch");
    if (c_te < c_tr) throw std::invalid_argument("split: c_te must be >= c_tr");
    if (std::abs(openness - osr::openness(c_tr, c_te, c_r)) > 1e-12)
        throw std::invalid_argument("split: stored openness disagrees with class counts");
}

OpenSetSplit make_open_set_split(const std::vector<int>& all_class_ids, int num_known, std::uint64_t seed) {
    if (num_known < 1 || num_known >= static_cast<int>(all_class_ids.size()))
        throw std::invalid_argument("make_open_set_split: num_known must be in [1, " +
                                    std::to_string(all_class_ids.size() - 1) + "]");
    std::vector<int> ids = all_class_ids;
    Rng rng(seed);
    rng.shuffle(ids);
    OpenSetSplit s;
    s.seed = seed;
    s.known_class_ids.assign(ids.begin(), ids.begin() + num_known);
    s.unknown_class_ids.assign(ids.begin() + num_known, ids.end());
    std::sort(s.known_class_ids.begin(), s.known_class_ids.end());
    std::sort(s.unknown_class_ids.begin(), s.unknown_class_ids.end());
    s.c_tr = num_known;
    s.c_te = static_cast<int>(all_class_ids.size());
    s.c_r = s.c_tr;
    s.openness = openness(s.c_tr, s.c_te, s.c_r);
    s.validate();
    return s;
}

std::string OpenSetSplit::manifest() const {
    std::ostringstream os;
    os << "dataset = " << dataset << "\n";
    os << "seed = " << seed << "\n";
    os << "known_ids =";
    for (int id : known_class_ids) os << " " << id;
    os << "\nunknown_ids =";
    for (int id : unknown_class_ids) os << " " << id;
    os << "\nc_tr = " << c_tr << "\nc_te = " << c_te << "\nc_r = " << c_r;
    os << "\nopenness = " << fmt_double(openness) << "\n";
    return os.str();
}

OpenSetSplit OpenSetSplit::from_manifest(const std::string& text) {
    OpenSetSplit s;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("split manifest: missing '=' in line '" + line + "'");
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string& t) {
            t.erase(0, t.find_first_not_of(" \t"));
            auto e = t.find_last_not_of(" \t\r");
            t.erase(e == std::string::npos ? 0 : e + 1);
        };
        trim(key);
        trim(val);
        try {
            if (key == "dataset") {
                s.dataset = val;
            } else if (key == "seed") {
                s.seed = std::stoull(val);
            } else if (key == "known_ids" || key == "unknown_ids") {
                std::istringstream vs(val);
                int id;
                auto& dst = key == "known_ids" ? s.known_class_ids : s.unknown_class_ids;
                while (vs >> id) dst.push_back(id);
            } else if (key == "c_tr") {
                s.c_tr = std::stoi(val);
            } else if (key == "c_te") {
                s.c_te = std::stoi(val);
            } else if (key == "c_r") {
                s.c_r = std::stoi(val);
            } else if (key == "openness") {
                s.openness = std::stod(val);
            } else {
                throw ParseError("split manifest: unknown key '" + key + "'");
            }
        } catch (const std::invalid_argument&) {
            throw ParseError("split manifest: bad value for '" + key + "'");
        }
    }
    s.validate();
    return s;
}

OpenSetSplit OpenSetSplit::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw NotFoundError("split manifest not found: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return from_manifest(buf.str());
}

void OpenSetSplit::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw NotFoundError("cannot write split manifest: " + path);
    os << manifest();
}

// ---------------------------------------------------------------------------
// Synthesized datasets
// ---------------------------------------------------------------------------

DatasetHandle synthesize_noise(int n, const ImageShape& shape, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("synthesize_noise: n must be >= 1");
    DatasetHandle d;
    d.name = "noise";
    d.shape = shape;
    d.test.images = nn::Tensor({n, shape.h, shape.w, shape.ch});
    Rng rng(seed);
    for (std::int64_t i = 0; i < d.test.images.size(); ++i) d.test.images[i] = rng.uniform();
    d.test.labels.assign(static_cast<std::size_t>(n), kUnknownLabel);
    return d;
}

DatasetHandle synthesize_mnist_noise(const DatasetHandle& digits, const DatasetHandle& noise) {
    if (!(digits.shape == noise.shape))
        throw std::invalid_argument("synthesize_mnist_noise: shape mismatch " + digits.shape.str() + " vs " + noise.shape.str());
    if (digits.test.count() != noise.test.count())
        throw std::invalid_argument("synthesize_mnist_noise: count mismatch " + std::to_string(digits.test.count()) +
                                    " vs " + std::to_string(noise.test.count()));
    DatasetHandle d;
    d.name = "mnist-noise";
    d.shape = digits.shape;
    d.test.images = digits.test.images;
    for (std::int64_t i = 0; i < d.test.images.size(); ++i) d.test.images[i] = std::max(d.test.images[i], noise.test.images[i]);
    d.test.labels.assign(static_cast<std::size_t>(d.test.count()), kUnknownLabel);
    return d;
}

// ---------------------------------------------------------------------------
// IDX ingestion
// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw ParseError("truncated IDX header: " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | b[3];
}

nn::Tensor read_idx_images(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NotFoundError("dataset file not found: " + path);
    if (read_be32(is, path) != 0x00000803u) throw ParseError("bad magic in IDX image file: " + path);
    const int n = static_cast<int>(read_be32(is, path));
    const int h = static_cast<int>(read_be32(is, path));
    const int w = static_cast<int>(read_be32(is, path));
    std::vector<unsigned char> raw(static_cast<std::size_t>(n) * h * w);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw ParseError("truncated IDX image data: " + path);
    nn::Tensor t({n, h, w, 1});
    for (std::size_t i = 0; i < raw.size(); ++i) t[static_cast<std::int64_t>(i)] = raw[i] / 255.0;
    return t;
}

std::vector<int> read_idx_labels(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NotFoundError("dataset file not found: " + path);
    if (read_be32(is, path) != 0x00000801u) throw ParseError("bad magic in IDX label file: " + path);
    const int n = static_cast<int>(read_be32(is, path));
    std::vector<unsigned char> raw(static_cast<std::size_t>(n));
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw ParseError("truncated IDX label data: " + path);
    return std::vector<int>(raw.begin(), raw.end());
}

ImageSet read_idx_set(const std::string& images_path, const std::string& labels_path) {
    ImageSet s;
    s.images = read_idx_images(images_path);
    s.labels = read_idx_labels(labels_path);
    if (s.count() != static_cast<int>(s.labels.size()))
        throw ParseError("IDX image/label count mismatch: " + images_path);
    return s;
}

DatasetHandle load_idx_dataset(const std::string& name, const std::string& dir, const std::string& train_prefix,
                               const std::string& test_prefix) {
    DatasetHandle d;
    d.name = name;
    d.train = read_idx_set(dir + "/" + train_prefix + "-images-idx3-ubyte", dir + "/" + train_prefix + "-labels-idx1-ubyte");
    d.test = read_idx_set(dir + "/" + test_prefix + "-images-idx3-ubyte", dir + "/" + test_prefix + "-labels-idx1-ubyte");
    d.shape = ImageShape{d.train.images.dim(1), d.train.images.dim(2), d.train.images.dim(3)};
    if (d.train.count() == 0 || d.test.count() == 0) throw ParseError("dataset " + name + " has an empty partition");
    ImageShape test_shape{d.test.images.dim(1), d.test.images.dim(2), d.test.images.dim(3)};
    if (!(test_shape == d.shape)) throw ParseError("dataset " + name + " train/test shapes disagree");
    return d;
}

}  // namespace

DatasetHandle load_dataset(const std::string& name, const std::string& root, std::uint64_t seed) {
    if (name == "mnist") return load_idx_dataset(name, root + "/mnist", "train", "t10k");
    if (name == "emnist-letters") return load_idx_dataset(name, root + "/emnist", "emnist-letters-train", "emnist-letters-test");
    if (name == "noise") return synthesize_noise(10000, ImageShape{28, 28, 1}, derive_seed(seed, "noise-dataset"));
    if (name == "mnist-noise") {
        DatasetHandle digits = load_dataset("mnist", root, seed);
        DatasetHandle noise = synthesize_noise(digits.test.count(), digits.shape, derive_seed(seed, "noise-dataset"));
        return synthesize_mnist_noise(digits, noise);
    }
    throw NotFoundError("unknown dataset '" + name + "'");
}

// ---------------------------------------------------------------------------
// Split application helpers
// ---------------------------------------------------------------------------

ImageSet filter_classes(const ImageSet& set, const std::vector<int>& class_ids, bool relabel) {
    std::vector<int> keep;
    std::vector<int> new_labels;
    for (int i = 0; i < set.count(); ++i) {
        const int lbl = set.labels[static_cast<std::size_t>(i)];
        auto it = std::find(class_ids.begin(), class_ids.end(), lbl);
        if (it == class_ids.end()) continue;
        keep.push_back(i);
        new_labels.push_back(relabel ? static_cast<int>(it - class_ids.begin()) : lbl);
    }
    ImageSet out;
    out.images = set.gather(keep);
    out.labels = std::move(new_labels);
    return out;
}

ImageSet mark_all_unknown(const ImageSet& set) {
    ImageSet out = set;
    std::fill(out.labels.begin(), out.labels.end(), kUnknownLabel);
    return out;
}

ImageSet subsample(const ImageSet& set, int n, Rng& rng) {
    if (n < 0) throw std::invalid_argument("subsample: negative size");
    if (n >= set.count()) return set;
    std::vector<int> idx(static_cast<std::size_t>(set.count()));
    for (int i = 0; i < set.count(); ++i) idx[static_cast<std::size_t>(i)] = i;
    rng.shuffle(idx);
    idx.resize(static_cast<std::size_t>(n));
    std::sort(idx.begin(), idx.end());
    ImageSet out;
    out.images = set.gather(idx);
    out.labels.reserve(idx.size());
    for (int i : idx) out.labels.push_back(set.labels[static_cast<std::size_t>(i)]);
    return out;
}

}  // namespace osr
