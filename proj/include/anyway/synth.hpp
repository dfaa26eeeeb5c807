#pragma once

#include <cstdint>
#include <string>

#include "anyway/episodes.hpp"

namespace anyway {

/// Gaussian-cluster mother dataset: M means uniform on a sphere of radius mean_scale,
/// isotropic noise with standard deviation noise_sigma.
struct SynthSpec {
  std::size_t classes = 20;
  std::size_t dim = 16;
  std::size_t per_class = 40;
  double mean_scale = 3.0;
  double noise_sigma = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
};

MotherDataset make_gaussian_mother(const SynthSpec& spec);

/// The base class means under a random orthogonal rotation (seeded by rotation_seed) with
/// noise scaled by sigma_scale, drawn from a fresh stream.
MotherDataset make_shifted(const SynthSpec& base, std::uint64_t rotation_seed, double sigma_scale);

/// Class means of make_gaussian_mother(spec), as a C x d matrix.
Matrix gaussian_class_means(const SynthSpec& spec);
/// Haar-ish random orthogonal d x d matrix (Gram-Schmidt on a Gaussian matrix).
Matrix random_rotation(std::size_t dim, std::uint64_t seed);

/// Binary feature file: text header "AWMETA1 M d\n", then per class "CLASS <name> <count>\n"
/// followed by count*d little-endian doubles.
void save_features(const MotherDataset& ds, const std::string& path);
MotherDataset load_features(const std::string& path);

std::string encode_features(const MotherDataset& ds);
MotherDataset decode_features(const std::string& bytes);

}  // namespace anyway
