#include "xmodal/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>

#include "xmodal/errors.hpp"

namespace xmodal {

namespace {

constexpr char kMagic[] = {'X', 'M', 'S', 'S', 'L', '1'};

class Writer {
 public:
  void bytes(const void* data, std::size_t n) { out_.append(static_cast<const char*>(data), n); }

  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  void str(const std::string& s) {
    u64(s.size());
    out_ += s;
  }

  void values(const Tensor& t) {
    for (double d : t.data()) u64(std::bit_cast<std::uint64_t>(d));
  }

  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  const char* bytes(std::size_t n, const char* what) {
    if (n > in_.size() - pos_) {
      throw ValidationError("checkpoint truncated while reading " + std::string(what) + " at byte " +
                            std::to_string(pos_));
    }
    const char* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::uint64_t u64(const char* what) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes(8, what));
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }

  std::uint32_t u32(const char* what) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes(4, what));
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }

  std::string str(const char* what) {
    const std::uint64_t n = u64(what);
    return std::string(bytes(n, what), n);
  }

  void values(Tensor& t, const char* what) {
    if (t.size() > (in_.size() - pos_) / 8) bytes(t.size() * 8, what);
    for (double& d : t.data()) d = std::bit_cast<double>(u64(what));
  }

  bool at_end() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

ModelConfig checked_model_config(const std::string& echo) {
  try {
    return model_config_from_echo(echo);
  } catch (const ConfigError& e) {
    throw ValidationError(std::string("checkpoint config echo is invalid: ") + e.what());
  }
}

}  // namespace

std::string config_echo(const ModelConfig& model, const TrainConfig& train) {
  KeyValueConfig kv;
  model.write_to(kv);
  train.write_to(kv);
  return kv.to_string();
}

ModelConfig model_config_from_echo(const std::string& echo) {
  KeyValueConfig kv = KeyValueConfig::parse(echo);
  return ModelConfig::from_config(kv);
}

TrainConfig train_config_from_echo(const std::string& echo) {
  KeyValueConfig kv = KeyValueConfig::parse(echo);
  return TrainConfig::from_config(kv);
}

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  const TrainState& s = checkpoint.state;
  const auto tensors = s.params.tensors();
  const auto names = s.params.tensor_names();
  if (s.adam.m.size() != tensors.size() || s.adam.v.size() != tensors.size()) {
    throw ContractError("encode_checkpoint: optimizer state does not match parameters");
  }
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.str(checkpoint.config_echo);
  w.u64(s.epochs_done);
  w.u64(tensors.size());
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    w.str(names[k]);
    w.u64(tensors[k]->rank());
    for (std::size_t d : tensors[k]->shape()) w.u64(d);
    w.values(*tensors[k]);
  }
  w.u64(s.adam.step);
  for (const Tensor& m : s.adam.m) w.values(m);
  for (const Tensor& v : s.adam.v) w.values(v);
  w.str(s.report.to_csv());
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.bytes(sizeof kMagic, "magic"), kMagic, sizeof kMagic) != 0) {
    throw ValidationError("not a checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  c.config_echo = r.str("config echo");
  c.state.epochs_done = r.u64("epoch counter");

  // Shapes come from the echoed config; the stored table has to agree.
  ModelParams params = init_params(checked_model_config(c.config_echo));
  const auto tensors = params.tensors();
  const auto names = params.tensor_names();
  const std::uint64_t count = r.u64("tensor count");
  if (count != tensors.size()) {
    throw ValidationError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                          std::to_string(tensors.size()));
  }
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const std::string name = r.str("tensor name");
    if (name != names[k]) throw ValidationError("expected tensor '" + names[k] + "', found '" + name + "'");
    const std::uint64_t rank = r.u64("tensor rank");
    if (rank != tensors[k]->rank()) throw ValidationError("rank mismatch for '" + name + "'");
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(r.u64("tensor shape"));
    if (shape != tensors[k]->shape()) {
      throw ValidationError("shape mismatch for '" + name + "': stored " + shape_string(shape) + ", expected " +
                            shape_string(tensors[k]->shape()));
    }
    r.values(*tensors[k], "tensor values");
  }
  AdamState adam = AdamState::zeros_like(std::as_const(params).tensors());
  adam.step = r.u64("optimizer step");
  for (Tensor& m : adam.m) r.values(m, "first moments");
  for (Tensor& v : adam.v) r.values(v, "second moments");
  const std::string report = r.str("training report");
  if (!r.at_end()) throw ValidationError("trailing bytes after checkpoint");
  try {
    c.state.report = TrainReport::from_csv(report);
  } catch (const ParseError& e) {
    throw ValidationError(std::string("checkpoint training report: ") + e.what());
  }
  if (c.state.report.epochs.size() != c.state.epochs_done) {
    throw ValidationError("checkpoint report has " + std::to_string(c.state.report.epochs.size()) +
                          " epochs, counter says " + std::to_string(c.state.epochs_done));
  }
  c.state.params = std::move(params);
  c.state.adam = std::move(adam);
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(checkpoint);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace xmodal
