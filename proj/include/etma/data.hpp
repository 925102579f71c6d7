#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "etma/rng.hpp"
#include "etma/tensor.hpp"

namespace etma {

/// One image-text pair; image values live in [0,1], quantized to 1/255
/// steps so PPM round-trips are exact. Label: 0 = real, 1 = fake.
struct MultimodalSample {
    std::string id;
    std::string text;
    Tensor image;
    int label = 0;
};

/// Generator recipe for the synthetic cross-modal benchmark. Each image has
/// one bright quadrant; the text names a quadrant. The label is real iff
/// the named quadrant is the bright one. Names, bright quadrants, and their
/// pairings are assigned by exact quotas, so whenever `quadrants` divides
/// both class counts, neither modality's marginal carries any label
/// information - only the cross-modal agreement does.
struct SyntheticSpec {
    std::size_t n_samples = 2000;
    std::size_t image_size = 32;
    std::size_t quadrants = 4;  // must be a perfect square whose root divides image_size
    std::size_t distractors = 6;
    std::uint64_t seed = 7;
    std::vector<std::string> quadrant_names;   // defaults for quadrants == 4
    std::vector<std::string> distractor_vocab; // default built-in word list

    void resolve_defaults();
    void validate() const;
};

std::vector<MultimodalSample> generate_synthetic(const SyntheticSpec& spec);

SyntheticSpec synthetic_spec_from_json(const std::string& text);
std::string synthetic_spec_to_json(const SyntheticSpec& spec);

// ---- image I/O (binary P6 PPM, maxval 255) --------------------------------

Tensor load_ppm(const std::filesystem::path& path);
void save_ppm(const std::filesystem::path& path, const Tensor& image);

// ---- dataset directories ----------------------------------------------------
// Layout: manifest.csv, images/<id>.ppm, spec.json-lines (generator echo).
// Manifest: header `id,text,image_path,label`; text double-quoted with
// doubled-quote escaping; label in {real, fake}.

struct ManifestRecord {
    std::string id;
    std::string text;
    std::string image_path;  // relative to the manifest's directory
    int label = 0;
};

struct DatasetManifest {
    std::filesystem::path dir;
    std::vector<ManifestRecord> records;
};

DatasetManifest load_manifest(const std::filesystem::path& csv_path);
void write_dataset(const std::filesystem::path& dir, const std::vector<MultimodalSample>& samples,
                   const SyntheticSpec* spec_echo, bool force);
std::vector<MultimodalSample> load_dataset(const std::filesystem::path& dir);

// ---- splitting ---------------------------------------------------------------

struct SplitSpec {
    double train = 0.8, val = 0.1, test = 0.1;
    std::uint64_t seed = 7;
};

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle then contiguous partition; disjoint and exhaustive.
SplitIndices split_dataset(std::size_t count, const SplitSpec& spec);

// ---- preprocessing -------------------------------------------------------------

struct ChannelStats {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

/// Per-channel moments over the given samples (the training split).
/// Stddev floored at 1e-6.
ChannelStats compute_channel_stats(const std::vector<MultimodalSample>& samples,
                                   const std::vector<std::size_t>& indices);

Tensor normalize_image(const Tensor& image, const ChannelStats& stats);
Tensor denormalize_image(const Tensor& image, const ChannelStats& stats);

/// Training-time augmentation on a square [0,1] image: identity, 90/180/270
/// degree rotation, horizontal flip, or a center zoom-crop (80-100%)
/// resized back with nearest neighbor. Shape and value range preserved.
Tensor augment(const Tensor& image, Rng& rng);

// ---- atomic file writes ----------------------------------------------------------

/// Writes through a temp file in the same directory, then renames; an
/// interrupted run never leaves a partial file under the final name.
void atomic_write_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace etma
