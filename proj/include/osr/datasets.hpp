#ifndef OSR_DATASETS_HPP
#define OSR_DATASETS_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "osr/rng.hpp"
#include "osr/shape.hpp"
#include "osr/tensor.hpp"

namespace osr {

// Label value for samples outside every known class.
inline constexpr int kUnknownLabel = -1;

struct LabeledImage {
    nn::Tensor pixels;  // [H,W,C], intensities in [0,1]
    int label = kUnknownLabel;
};

// A labelled image collection stored as one [N,H,W,C] tensor. Immutable after
// construction; concurrent readers are safe.
struct ImageSet {
    nn::Tensor images;
    std::vector<int> labels;

    int count() const { return images.rank() == 4 ? images.dim(0) : 0; }
    LabeledImage at(int i) const;
    // Batch assembly: stacks the rows named by `indices`.
    nn::Tensor gather(std::span<const int> indices) const;
    std::vector<int> distinct_labels() const;
};

struct DatasetHandle {
    std::string name;
    ImageShape shape{};
    ImageSet train, test;
};

// Which classes are known/unknown plus openness metadata.
struct OpenSetSplit {
    std::string dataset;
    std::vector<int> known_class_ids;
    std::vector<int> unknown_class_ids;
    int c_tr = 0, c_te = 0, c_r = 0;
    double openness = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
    std::string manifest() const;
    static OpenSetSplit from_manifest(const std::string& text);
    static OpenSetSplit load(const std::string& path);
    void save(const std::string& path) const;
};

// 1 - sqrt(2*c_tr / (c_te + c_r)); no clamping.
double openness(int c_tr, int c_te, int c_r);

// Draws num_known classes uniformly without replacement (Fisher-Yates on the
// id list); the rest become unknown. c_r defaults to c_tr, which reproduces
// the published openness figures.
OpenSetSplit make_open_set_split(const std::vector<int>& all_class_ids, int num_known, std::uint64_t seed);

// n images with every pixel i.i.d. uniform on [0,1]; all labels unknown, data
// in the test partition.
DatasetHandle synthesize_noise(int n, const ImageShape& shape, std::uint64_t seed);

// Pointwise max of the two test partitions (digit strokes survive, noise
// fills the background); counts and shapes must agree.
DatasetHandle synthesize_mnist_noise(const DatasetHandle& digits, const DatasetHandle& noise);

// Known names: "mnist" and "emnist-letters" (IDX files on disk, see README
// for the layout), "noise" and "mnist-noise" (synthesized, seed-derived).
// Pixels are normalized to [0,1] at ingestion.
DatasetHandle load_dataset(const std::string& name, const std::string& root, std::uint64_t seed = 0);

// Samples whose label is in `class_ids`. When `relabel` is set, labels are
// rewritten to the index of their class inside `class_ids` (0-based).
ImageSet filter_classes(const ImageSet& set, const std::vector<int>& class_ids, bool relabel);

// Copy with every label replaced by the unknown sentinel.
ImageSet mark_all_unknown(const ImageSet& set);

// Seeded subsample without replacement down to n elements (returns the set
// itself when it is already small enough).
ImageSet subsample(const ImageSet& set, int n, Rng& rng);

}  // namespace osr

#endif
