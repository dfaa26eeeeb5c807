#include "anyway/synth.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "anyway/errors.hpp"

namespace anyway {

namespace {

constexpr std::uint64_t kMeanStream = 0x6d65616e;
constexpr std::uint64_t kNoiseStream = 0x6e6f6973;
constexpr std::uint64_t kRotationStream = 0x726f7461;
constexpr std::uint64_t kShiftNoiseStream = 0x73686966;
constexpr const char* kMagic = "AWMETA1";

std::string class_name(std::size_t index) {
  std::string digits = std::to_string(index);
  return "class" + std::string(digits.size() < 3 ? 3 - digits.size() : 0, '0') + digits;
}

MotherDataset sample_around(const Matrix& means, double sigma, Rng& noise_rng,
                            std::size_t per_class) {
  std::normal_distribution<double> noise(0.0, 1.0);
  MotherDataset ds;
  ds.feature_dim = means.cols();
  for (std::size_t c = 0; c < means.rows(); ++c) {
    SemanticClass cls{class_name(c + 1), Matrix(per_class, means.cols())};
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t k = 0; k < means.cols(); ++k) {
        cls.examples(i, k) = means(c, k) + sigma * noise(noise_rng);
      }
    }
    ds.classes.push_back(std::move(cls));
  }
  return ds;
}

void put_le_double(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

double get_le_double(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

/// Reads one '\n'-terminated line starting at `pos`, advancing past the newline.
std::string read_line(const std::string& bytes, std::size_t& pos, const char* what) {
  const auto nl = bytes.find('\n', pos);
  if (nl == std::string::npos) throw LoadError(std::string("truncated ") + what + " line", pos);
  std::string line = bytes.substr(pos, nl - pos);
  pos = nl + 1;
  return line;
}

}  // namespace

void SynthSpec::validate() const {
  if (classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (dim < 1) throw ConfigError("synthetic dataset dimension must be positive");
  if (per_class < 1) throw ConfigError("per_class must be positive");
  if (!(noise_sigma > 0.0)) throw ConfigError("noise_sigma must be positive");
  if (!(mean_scale >= 0.0)) throw ConfigError("mean_scale must be non-negative");
}

Matrix gaussian_class_means(const SynthSpec& spec) {
  Rng rng = make_rng(spec.seed, kMeanStream);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix means(spec.classes, spec.dim);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    double norm2 = 0.0;
    auto row = means.row(c);
    do {
      norm2 = 0.0;
      for (double& v : row) {
        v = normal(rng);
        norm2 += v * v;
      }
    } while (norm2 == 0.0);
    const double scale = spec.mean_scale / std::sqrt(norm2);
    for (double& v : row) v *= scale;
  }
  return means;
}

MotherDataset make_gaussian_mother(const SynthSpec& spec) {
  spec.validate();
  Rng noise_rng = make_rng(spec.seed, kNoiseStream);
  return sample_around(gaussian_class_means(spec), spec.noise_sigma, noise_rng, spec.per_class);
}

Matrix random_rotation(std::size_t dim, std::uint64_t seed) {
  Rng rng = make_rng(seed, kRotationStream);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix q(dim, dim);
  // rows of q become an orthonormal basis (modified Gram-Schmidt)
  for (std::size_t i = 0; i < dim; ++i) {
    double norm = 0.0;
    do {
      auto row = q.row(i);
      for (double& v : row) v = normal(rng);
      for (std::size_t j = 0; j < i; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < dim; ++k) dot += q(i, k) * q(j, k);
        for (std::size_t k = 0; k < dim; ++k) q(i, k) -= dot * q(j, k);
      }
      norm = 0.0;
      for (double v : row) norm += v * v;
      norm = std::sqrt(norm);
    } while (norm < 1e-8);
    for (double& v : q.row(i)) v /= norm;
  }
  return q;
}

MotherDataset make_shifted(const SynthSpec& base, std::uint64_t rotation_seed,
                           double sigma_scale) {
  base.validate();
  if (!(sigma_scale > 0.0)) throw ConfigError("sigma_scale must be positive");
  const Matrix means = matmul(gaussian_class_means(base), random_rotation(base.dim, rotation_seed));
  Rng noise_rng = make_rng(rotation_seed, kShiftNoiseStream);
  return sample_around(means, base.noise_sigma * sigma_scale, noise_rng, base.per_class);
}

std::string encode_features(const MotherDataset& ds) {
  if (ds.classes.empty()) throw ValidationError("refusing to write a dataset with no classes");
  if (ds.feature_dim == 0) throw ValidationError("refusing to write zero-dimensional features");
  ds.validate();
  std::string out = std::string(kMagic) + " " + std::to_string(ds.classes.size()) + " " +
                    std::to_string(ds.feature_dim) + "\n";
  for (const auto& cls : ds.classes) {
    if (cls.name.empty() || cls.name.find_first_of(" \t\r\n") != std::string::npos) {
      throw ValidationError("class name '" + cls.name + "' must be non-empty without whitespace");
    }
    out += "CLASS " + cls.name + " " + std::to_string(cls.examples.rows()) + "\n";
    for (double v : cls.examples.data()) put_le_double(out, v);
  }
  return out;
}

MotherDataset decode_features(const std::string& bytes) {
  std::size_t pos = 0;
  const std::string header = read_line(bytes, pos, "header");
  std::istringstream hs(header);
  std::string magic;
  std::size_t m = 0;
  std::size_t d = 0;
  if (!(hs >> magic) || magic != kMagic) throw LoadError("bad magic, expected AWMETA1", 0);
  if (!(hs >> m >> d) || d == 0) throw LoadError("malformed header", 0);

  MotherDataset ds;
  ds.feature_dim = d;
  for (std::size_t c = 0; c < m; ++c) {
    const std::size_t line_start = pos;
    if (pos >= bytes.size()) {
      throw LoadError("header declares " + std::to_string(m) + " classes, found " +
                          std::to_string(c),
                      pos);
    }
    std::istringstream ls(read_line(bytes, pos, "CLASS"));
    std::string tag;
    std::string name;
    std::size_t count = 0;
    std::string extra;
    if (!(ls >> tag >> name >> count) || tag != "CLASS" || (ls >> extra)) {
      throw LoadError("malformed CLASS line", line_start);
    }
    const std::size_t payload = count * d * sizeof(double);
    if (bytes.size() - pos < payload) {
      throw LoadError("truncated data for class '" + name + "'", bytes.size());
    }
    Matrix examples(count, d);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    for (std::size_t k = 0; k < count * d; ++k) examples.data()[k] = get_le_double(p + 8 * k);
    pos += payload;
    ds.classes.push_back({std::move(name), std::move(examples)});
  }
  if (pos != bytes.size()) throw LoadError("trailing bytes after last class", pos);
  return ds;
}

void save_features(const MotherDataset& ds, const std::string& path) {
  const std::string bytes = encode_features(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path + "'");
}

MotherDataset load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open '" + path + "'", 0);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_features(bytes);
}

}  // namespace anyway
