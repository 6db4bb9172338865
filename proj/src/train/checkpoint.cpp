#include "carope/train/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "carope/errors.hpp"

namespace carope::train {
namespace {

constexpr char kMagic[4] = {'C', 'A', 'R', 'O'};

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) buf_.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) buf_.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    const char* p = take(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[k])) << (8 * k);
    return v;
  }
  std::uint64_t u64() {
    const char* p = take(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[k])) << (8 * k);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string text() {
    const std::uint32_t n = u32();
    return std::string(take(n), n);
  }
  const char* take(std::size_t n) {
    if (pos_ + n > buf_.size()) throw IngestionError("checkpoint truncated");
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

void put_model(Writer& w, const model::ModelConfig& c) {
  w.u64(c.n_layers);
  w.u64(c.n_heads);
  w.u64(c.d_model);
  w.u64(c.vocab_size);
  w.u64(c.max_context);
  w.u8(static_cast<std::uint8_t>(c.encoding));
  w.u8(c.tie_embeddings ? 1 : 0);
  w.u64(c.seed);
}

model::ModelConfig get_model(Reader& r) {
  model::ModelConfig c;
  c.n_layers = r.u64();
  c.n_heads = r.u64();
  c.d_model = r.u64();
  c.vocab_size = r.u64();
  c.max_context = r.u64();
  const std::uint8_t enc = r.u8();
  if (enc > static_cast<std::uint8_t>(posenc::EncodingKind::carope)) throw IngestionError("unknown encoding tag");
  c.encoding = static_cast<posenc::EncodingKind>(enc);
  c.tie_embeddings = r.u8() != 0;
  c.seed = r.u64();
  return c;
}

void put_train(Writer& w, const TrainConfig& c) {
  w.f64(c.max_lr);
  w.f64(c.min_lr);
  w.u64(c.warmup_steps);
  w.u64(c.total_steps);
  w.u64(c.tokens_per_update);
  w.u64(c.batch_size);
  w.u64(c.seq_len);
  w.f64(c.weight_decay);
  w.f64(c.beta1);
  w.f64(c.beta2);
  w.f64(c.eps);
  w.f64(c.grad_clip);
  w.u64(c.seed);
  w.u64(c.checkpoint_interval);
}

TrainConfig get_train(Reader& r) {
  TrainConfig c;
  c.max_lr = r.f64();
  c.min_lr = r.f64();
  c.warmup_steps = r.u64();
  c.total_steps = r.u64();
  c.tokens_per_update = r.u64();
  c.batch_size = r.u64();
  c.seq_len = r.u64();
  c.weight_decay = r.f64();
  c.beta1 = r.f64();
  c.beta2 = r.f64();
  c.eps = r.f64();
  c.grad_clip = r.f64();
  c.seed = r.u64();
  c.checkpoint_interval = r.u64();
  return c;
}

template <typename T>
void put_entry(Writer& w, const std::string& name, const num::Shape& shape, std::span<const T> values) {
  w.text(name);
  w.u8(static_cast<std::uint8_t>(num::dtype_of<T>));
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) w.u64(d);
  for (T v : values) {
    if constexpr (sizeof(T) == 4) {
      w.f32(v);
    } else {
      w.f64(v);
    }
  }
}

struct Entry {
  num::Shape shape;
  std::vector<double> values;  // widened; narrowed back losslessly for the stored dtype
  num::Dtype dtype;
};

Entry get_entry(Reader& r, std::string& name) {
  name = r.text();
  Entry e;
  const std::uint8_t tag = r.u8();
  if (tag > 1) throw IngestionError("entry '" + name + "' has unknown dtype tag");
  e.dtype = static_cast<num::Dtype>(tag);
  const std::uint32_t rank = r.u32();
  for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.u64());
  const std::size_t n = num::element_count(e.shape);
  e.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) e.values[i] = e.dtype == num::Dtype::f32 ? r.f32() : r.f64();
  return e;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint '" + path.string() + "'");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

CheckpointInfo read_header(Reader& r) {
  if (std::string(r.take(4), 4) != std::string(kMagic, 4)) throw IngestionError("not a CARO checkpoint");
  CheckpointInfo info;
  info.version = r.u32();
  if (info.version != kCheckpointVersion) {
    throw IngestionError("checkpoint format version " + std::to_string(info.version) + " is not supported (this build reads version " +
                         std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint8_t tag = r.u8();
  if (tag > 1) throw IngestionError("unknown checkpoint dtype tag");
  info.dtype = static_cast<num::Dtype>(tag);
  info.model = get_model(r);
  info.train = get_train(r);
  info.step = r.u64();
  info.sampler_state = r.text();
  return info;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Session<T>& session) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(num::dtype_of<T>));
  put_model(w, session.model.config());
  put_train(w, session.cfg);
  w.u64(session.step);
  w.text(session.sampler_state);

  const auto& params = session.model.parameters();
  const auto& m = session.optimizer.first_moments();
  const auto& v = session.optimizer.second_moments();
  w.u32(static_cast<std::uint32_t>(params.size() + m.size() + v.size()));
  for (const auto& p : params) put_entry<T>(w, p.name, p.value.shape(), p.value.values());
  for (const auto& p : params) {
    if (auto it = m.find(p.name); it != m.end()) put_entry<T>(w, "adamw.m." + p.name, p.value.shape(), it->second);
    if (auto it = v.find(p.name); it != v.end()) put_entry<T>(w, "adamw.v." + p.name, p.value.shape(), it->second);
  }

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError("cannot write checkpoint '" + tmp.string() + "'");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IngestionError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  Reader r(slurp(path));
  return read_header(r);
}

template <typename T>
Session<T> load_checkpoint(const std::filesystem::path& path) {
  Reader r(slurp(path));
  const CheckpointInfo info = read_header(r);
  if (info.dtype != num::dtype_of<T>) {
    throw IngestionError("checkpoint holds " + std::string(num::to_string(info.dtype)) + " parameters, requested " +
                         std::string(num::to_string(num::dtype_of<T>)));
  }
  Session<T> session(info.model, info.train);
  session.step = info.step;
  session.sampler_state = info.sampler_state;
  session.optimizer.set_step_count(info.step);

  const std::uint32_t count = r.u32();
  std::size_t loaded = 0;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name;
    Entry e = get_entry(r, name);
    std::vector<T> values(e.values.begin(), e.values.end());
    const auto moment = [&](std::string_view prefix, auto& store) {
      if (!name.starts_with(prefix)) return false;
      const std::string target = name.substr(prefix.size());
      if (!session.model.has_parameter(target)) throw IngestionError("moment '" + name + "' has no parameter");
      if (session.model.parameter(target).value.shape() != e.shape) {
        throw IngestionError("moment '" + name + "' has the wrong shape");
      }
      store[target] = std::move(values);
      return true;
    };
    if (moment("adamw.m.", session.optimizer.first_moments())) continue;
    if (moment("adamw.v.", session.optimizer.second_moments())) continue;
    if (!session.model.has_parameter(name)) throw IngestionError("unexpected checkpoint entry '" + name + "'");
    auto& p = session.model.parameter(name);
    if (p.value.shape() != e.shape) {
      throw IngestionError("parameter '" + name + "' has shape " + num::to_string(e.shape) + ", model expects " +
                           num::to_string(p.value.shape()));
    }
    p.value = num::Tensor<T>(e.shape, std::move(values));
    ++loaded;
  }
  if (loaded != session.model.parameters().size()) throw IngestionError("checkpoint is missing parameters");
  if (!r.done()) throw IngestionError("trailing bytes after checkpoint entries");
  return session;
}

template void save_checkpoint<float>(const std::filesystem::path&, const Session<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const Session<double>&);
template Session<float> load_checkpoint<float>(const std::filesystem::path&);
template Session<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace carope::train
