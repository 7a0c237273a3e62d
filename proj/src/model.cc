#include "qpress/model.h"

#include <cstring>
#include <fstream>
#include <sstream>

#include "qpress/config.h"
#include "qpress/errors.h"

namespace qpress {

namespace {

constexpr char kCheckpointMagic[4] = {'Q', 'P', 'C', 'K'};
constexpr uint16_t kCheckpointVersion = 1;

class Fnv1a {
 public:
  void Add(const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ull;
    }
  }
  template <typename T>
  void AddLe(T v) {
    uint8_t b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));  // little-endian hosts only
    Add(b, sizeof(T));
  }
  uint64_t value() const { return hash_; }

 private:
  uint64_t hash_ = 0xcbf29ce484222325ull;
};

// Little-endian binary stream helpers for the archive.
void PutU16(std::ostream& o, uint16_t v) { o.write(reinterpret_cast<const char*>(&v), 2); }
void PutU32(std::ostream& o, uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
void PutU64(std::ostream& o, uint64_t v) { o.write(reinterpret_cast<const char*>(&v), 8); }
void PutString(std::ostream& o, const std::string& s) {
  PutU32(o, static_cast<uint32_t>(s.size()));
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void PutMatrix(std::ostream& o, const Matrix& m) {
  PutU32(o, static_cast<uint32_t>(m.rows()));
  PutU32(o, static_cast<uint32_t>(m.cols()));
  o.write(reinterpret_cast<const char*>(m.data()),
          static_cast<std::streamsize>(m.size() * sizeof(double)));
}

template <typename T>
T Get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("truncated checkpoint");
  return v;
}
std::string GetString(std::istream& in) {
  const auto n = Get<uint32_t>(in);
  if (n > (1u << 24)) throw FormatError("implausible string length in checkpoint");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw FormatError("truncated checkpoint");
  return s;
}
Matrix GetMatrix(std::istream& in) {
  const auto rows = Get<uint32_t>(in);
  const auto cols = Get<uint32_t>(in);
  if (static_cast<uint64_t>(rows) * cols > (1ull << 30)) {
    throw FormatError("implausible tensor size in checkpoint");
  }
  Matrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!in) throw FormatError("truncated checkpoint");
  return m;
}

}  // namespace

Model::Model(const ModelConfig& config)
    : encoder(config),
      decoder(config),
      prior(config.dim, config.prior_filters, config.likelihood_floor),
      config_(config) {}

void Model::Init() {
  Rng rng(config_.seed);
  encoder.Init(rng);
  decoder.Init(rng);
  prior.Init(config_.prior_init_scale, rng);
}

void Model::VisitParams(const ParamVisitor& visit) {
  encoder.VisitParams(visit);
  decoder.VisitParams(visit);
  prior.VisitParams(visit);
}

void Model::ZeroGrad() {
  VisitParams([](const std::string&, Param& p) { p.ZeroGrad(); });
}

size_t Model::ParameterCount() const {
  size_t n = 0;
  const_cast<Model*>(this)->VisitParams(
      [&](const std::string&, Param& p) { n += p.value.size(); });
  return n;
}

uint64_t Model::Digest() const {
  Fnv1a h;
  const std::string canonical = config_.Canonical();
  h.Add(canonical.data(), canonical.size());
  const_cast<Model*>(this)->VisitParams([&](const std::string& name, Param& p) {
    h.Add(name.data(), name.size());
    h.AddLe<uint32_t>(static_cast<uint32_t>(p.value.rows()));
    h.AddLe<uint32_t>(static_cast<uint32_t>(p.value.cols()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) h.AddLe<double>(p.value.data()[i]);
  });
  return h.value();
}

void SaveCheckpoint(const std::filesystem::path& path, const Model& model,
                    const TrainingState* training) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(kCheckpointMagic, 4);
    PutU16(out, kCheckpointVersion);
    PutString(out, model.config().Canonical());
    PutU64(out, model.Digest());
    std::vector<std::pair<std::string, const Param*>> params;
    const_cast<Model&>(model).VisitParams(
        [&](const std::string& name, Param& p) { params.emplace_back(name, &p); });
    PutU32(out, static_cast<uint32_t>(params.size()));
    for (const auto& [name, p] : params) {
      PutString(out, name);
      PutMatrix(out, p->value);
    }
    out.put(training != nullptr ? 1 : 0);
    if (training != nullptr) {
      PutU64(out, static_cast<uint64_t>(training->step));
      PutString(out, training->rng_state);
      PutU32(out, static_cast<uint32_t>(training->first_moment.size()));
      for (const auto& [name, m] : training->first_moment) {
        PutString(out, name);
        PutMatrix(out, m);
        PutMatrix(out, training->second_moment.at(name));
      }
    }
    out.flush();
    if (!out) throw IoError("write failed for '" + tmp.string() + "' (disk full?)");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError("'" + path.string() + "' is not a checkpoint");
  }
  if (Get<uint16_t>(in) != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version");
  }
  const ModelConfig config = ParseCanonicalConfig(GetString(in));
  const auto digest = Get<uint64_t>(in);
  Checkpoint ckpt{Model(config), std::nullopt};
  std::map<std::string, Matrix> tensors;
  const auto count = Get<uint32_t>(in);
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = GetString(in);
    tensors[name] = GetMatrix(in);
  }
  ckpt.model.VisitParams([&](const std::string& name, Param& p) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("checkpoint lacks tensor " + name);
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols()) {
      throw FormatError("checkpoint tensor " + name + " has the wrong shape");
    }
    p.value = std::move(it->second);
    p.ZeroGrad();
    tensors.erase(it);
  });
  if (!tensors.empty()) {
    throw FormatError("checkpoint has unexpected tensor " + tensors.begin()->first);
  }
  if (ckpt.model.Digest() != digest) {
    throw FormatError("checkpoint digest mismatch (corrupt file)");
  }
  const int has_training = in.get();
  if (has_training == 1) {
    TrainingState st;
    st.step = static_cast<int64_t>(Get<uint64_t>(in));
    st.rng_state = GetString(in);
    const auto n = Get<uint32_t>(in);
    for (uint32_t i = 0; i < n; ++i) {
      std::string name = GetString(in);
      st.first_moment[name] = GetMatrix(in);
      st.second_moment[name] = GetMatrix(in);
    }
    ckpt.training = std::move(st);
  } else if (has_training != 0) {
    throw FormatError("truncated checkpoint");
  }
  return ckpt;
}

ModelConfig ParseCanonicalConfig(const std::string& text) {
  ModelConfig config;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("bad config line '" + line + "'");
    ApplyModelSetting(config, line.substr(0, eq), line.substr(eq + 1));
  }
  config.Validate();
  return config;
}

}  // namespace qpress
