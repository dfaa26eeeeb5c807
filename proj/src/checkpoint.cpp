#include "anyway/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "anyway/errors.hpp"

namespace anyway {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "AWCKPT";
constexpr int kVersion = 1;

struct NamedBuffer {
  std::string name;
  Matrix* matrix;
};

std::vector<NamedBuffer> named_buffers(Checkpoint& ckpt) {
  std::vector<NamedBuffer> out;
  MlpEncoder& enc = ckpt.backend == Backend::maml ? ckpt.maml.encoder : ckpt.proto.encoder;
  for (std::size_t i = 0; i < enc.layer_count(); ++i) {
    out.push_back({"encoder.weight" + std::to_string(i), &enc.weights[i]});
    out.push_back({"encoder.bias" + std::to_string(i), &enc.biases[i]});
  }
  if (ckpt.backend == Backend::maml) {
    out.push_back({"anyway_head.weight", &ckpt.maml.anyway_head.weight});
    out.push_back({"anyway_head.bias", &ckpt.maml.anyway_head.bias});
    if (ckpt.maml.semantic_head) {
      out.push_back({"semantic_head.weight", &ckpt.maml.semantic_head->weight});
      out.push_back({"semantic_head.bias", &ckpt.maml.semantic_head->bias});
    }
  } else {
    out.push_back({"memory.prototypes", &ckpt.proto.memory.prototypes});
  }
  return out;
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

}  // namespace

Backend parse_backend(const std::string& name) {
  if (name == "maml") return Backend::maml;
  if (name == "protonet") return Backend::protonet;
  throw ConfigError("unknown backend '" + name + "' (expected maml|protonet)");
}

std::string to_string(Backend backend) { return backend == Backend::maml ? "maml" : "protonet"; }

bool Checkpoint::bit_equal(const Checkpoint& other) const {
  if (backend != other.backend || mode != other.mode || step != other.step) return false;
  return backend == Backend::maml ? maml.bit_equal(other.maml) : proto.bit_equal(other.proto);
}

std::string encode_checkpoint(const Checkpoint& ckpt_in) {
  Checkpoint ckpt = ckpt_in;
  const MlpEncoder& enc = ckpt.encoder();
  enc.validate();
  json header;
  header["format"] = kFormat;
  header["version"] = kVersion;
  header["backend"] = to_string(ckpt.backend);
  header["mode"] = to_string(ckpt.mode);
  header["step"] = ckpt.step;
  header["layer_dims"] = enc.layer_dims;
  header["activate_output"] = enc.activate_output;
  if (ckpt.backend == Backend::maml) {
    ckpt.maml.validate();
    header["O"] = ckpt.maml.output_width();
    header["C"] = ckpt.maml.semantic_head ? ckpt.maml.semantic_head->out_dim() : 0;
  } else {
    const PrototypeMemory& mem = ckpt.proto.memory;
    if (mem.seen.size() != mem.class_count()) throw ValidationError("memory seen mask size");
    std::vector<int> seen(mem.seen.begin(), mem.seen.end());
    header["O"] = 0;
    header["C"] = mem.class_count();
    header["memory"] = {{"C", mem.class_count()},
                        {"F", mem.feature_dim()},
                        {"rho", mem.ema_rate},
                        {"seen", seen}};
  }
  json buffers = json::array();
  const auto named = named_buffers(ckpt);
  for (const auto& b : named) {
    buffers.push_back({{"name", b.name}, {"rows", b.matrix->rows()}, {"cols", b.matrix->cols()}});
  }
  header["buffers"] = buffers;

  std::string out = header.dump() + "\n";
  for (const auto& b : named) {
    for (double v : b.matrix->data()) put_le_double(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw LoadError("checkpoint header not terminated", bytes.size());
  json header;
  try {
    header = json::parse(bytes.substr(0, nl));
  } catch (const json::exception& e) {
    throw LoadError(std::string("checkpoint header is not JSON: ") + e.what(), 0);
  }
  try {
    if (header.at("format").get<std::string>() != kFormat) throw LoadError("bad checkpoint format tag", 0);
    if (header.at("version").get<int>() != kVersion) {
      throw LoadError("unsupported checkpoint version " + header.at("version").dump(), 0);
    }
    Checkpoint ckpt;
    ckpt.backend = parse_backend(header.at("backend").get<std::string>());
    ckpt.mode = parse_train_mode(header.at("mode").get<std::string>());
    ckpt.step = header.at("step").get<std::size_t>();
    const auto dims = header.at("layer_dims").get<std::vector<std::size_t>>();
    if (dims.size() < 2) throw LoadError("checkpoint layer_dims too short", 0);

    MlpEncoder enc;
    enc.layer_dims = dims;
    enc.activate_output = header.at("activate_output").get<bool>();
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      enc.weights.emplace_back(dims[i], dims[i + 1]);
      enc.biases.emplace_back(1, dims[i + 1]);
    }
    const std::size_t F = dims.back();
    if (ckpt.backend == Backend::maml) {
      const auto O = header.at("O").get<std::size_t>();
      const auto C = header.at("C").get<std::size_t>();
      if (O == 0) throw LoadError("checkpoint O must be positive", 0);
      ckpt.maml.encoder = std::move(enc);
      ckpt.maml.anyway_head = LinearHead{Matrix(F, O), Matrix(1, O)};
      if (C > 0) ckpt.maml.semantic_head = LinearHead{Matrix(F, C), Matrix(1, C)};
    } else {
      const json& mem = header.at("memory");
      const auto C = mem.at("C").get<std::size_t>();
      if (mem.at("F").get<std::size_t>() != F) throw LoadError("memory width != feature width", 0);
      ckpt.proto.encoder = std::move(enc);
      ckpt.proto.memory = PrototypeMemory::create(C, F, mem.at("rho").get<double>());
      const auto seen = mem.at("seen").get<std::vector<int>>();
      if (seen.size() != C) throw LoadError("memory seen mask size != C", 0);
      for (std::size_t c = 0; c < C; ++c) ckpt.proto.memory.seen[c] = seen[c] != 0;
    }

    const json& listed = header.at("buffers");
    auto named = named_buffers(ckpt);
    if (listed.size() != named.size()) throw LoadError("checkpoint buffer count mismatch", 0);
    std::size_t pos = nl + 1;
    for (std::size_t i = 0; i < named.size(); ++i) {
      Matrix& m = *named[i].matrix;
      if (listed[i].at("name").get<std::string>() != named[i].name ||
          listed[i].at("rows").get<std::size_t>() != m.rows() ||
          listed[i].at("cols").get<std::size_t>() != m.cols()) {
        throw LoadError("checkpoint buffer '" + named[i].name + "' disagrees with header dims", pos);
      }
      const std::size_t need = m.size() * sizeof(double);
      if (bytes.size() - pos < need) throw LoadError("truncated checkpoint buffer '" + named[i].name + "'", bytes.size());
      const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
      for (std::size_t k = 0; k < m.size(); ++k) m.data()[k] = get_le_double(p + 8 * k);
      pos += need;
    }
    if (pos != bytes.size()) throw LoadError("trailing bytes after checkpoint buffers", pos);
    return ckpt;
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed checkpoint header: ") + e.what(), 0);
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open '" + path + "'", 0);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace anyway
