#include "carope/data/corpus.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "carope/errors.hpp"

namespace carope::data {
namespace {

constexpr char kMagic[4] = {'C', 'T', 'O', 'K'};
constexpr std::uint32_t kVersion = 1;

std::string fnv1a_hex(std::span<const char> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint32_t read_u32le(const char* p) {
  const auto* u = reinterpret_cast<const unsigned char*>(p);
  return static_cast<std::uint32_t>(u[0]) | static_cast<std::uint32_t>(u[1]) << 8 |
         static_cast<std::uint32_t>(u[2]) << 16 | static_cast<std::uint32_t>(u[3]) << 24;
}

void put_u32le(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

}  // namespace

std::span<const std::int32_t> Corpus::segment(Split split) const {
  const std::span<const std::int32_t> all(tokens);
  return split == Split::train ? all.first(split_point) : all.subspan(split_point);
}

Corpus make_corpus(std::vector<std::int32_t> tokens, std::size_t split_point, std::size_t vocab_size) {
  if (split_point > tokens.size()) throw ConfigError("split_point", "beyond end of corpus");
  for (std::int32_t t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) {
      throw IngestionError("token id " + std::to_string(t) + " outside vocabulary of " + std::to_string(vocab_size));
    }
  }
  Corpus c;
  c.tokens = std::move(tokens);
  c.split_point = split_point;
  c.vocab_size = vocab_size;
  std::span<const char> raw(reinterpret_cast<const char*>(c.tokens.data()), c.tokens.size() * sizeof(std::int32_t));
  c.source_digest = fnv1a_hex(raw);
  return c;
}

Corpus ingest(const std::filesystem::path& path, TokenizerKind kind, double eval_fraction, std::size_t vocab_size) {
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) throw ConfigError("eval_fraction", "must lie in (0, 1)");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open corpus '" + path.string() + "'");
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw IngestionError("corpus '" + path.string() + "' is empty");

  const bool has_magic = bytes.size() >= 8 && std::memcmp(bytes.data(), kMagic, 4) == 0;
  if (kind == TokenizerKind::automatic) kind = has_magic ? TokenizerKind::pretokenized : TokenizerKind::bytes;

  std::vector<std::int32_t> tokens;
  if (kind == TokenizerKind::bytes) {
    if (vocab_size < 256) throw ConfigError("vocab_size", "byte tokenizer needs at least 256 ids");
    tokens.reserve(bytes.size());
    for (char c : bytes) tokens.push_back(static_cast<unsigned char>(c));
  } else {
    if (!has_magic) throw IngestionError("'" + path.string() + "' lacks the CTOK header");
    const std::uint32_t version = read_u32le(bytes.data() + 4);
    if (version != kVersion) {
      throw IngestionError("unsupported CTOK version " + std::to_string(version) + " (expected 1)");
    }
    if ((bytes.size() - 8) % 4 != 0) throw IngestionError("CTOK payload is not a whole number of u32 ids");
    const std::size_t n = (bytes.size() - 8) / 4;
    if (n == 0) throw IngestionError("CTOK file holds no tokens");
    tokens.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t id = read_u32le(bytes.data() + 8 + 4 * i);
      if (id >= vocab_size) {
        throw IngestionError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab_size));
      }
      tokens.push_back(static_cast<std::int32_t>(id));
    }
  }

  const auto eval_count = static_cast<std::size_t>(std::ceil(static_cast<double>(tokens.size()) * eval_fraction));
  Corpus c;
  c.split_point = tokens.size() - std::min(eval_count, tokens.size());
  c.tokens = std::move(tokens);
  c.vocab_size = vocab_size;
  c.source_digest = fnv1a_hex(bytes);
  return c;
}

void write_pretokenized(const std::filesystem::path& path, std::span<const std::int32_t> tokens) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  out.write(kMagic, 4);
  put_u32le(out, kVersion);
  for (std::int32_t t : tokens) put_u32le(out, static_cast<std::uint32_t>(t));
}

BatchStream::BatchStream(const Corpus& corpus, std::size_t seq_len, std::size_t batch_size, std::uint64_t seed,
                         Split split)
    : segment_(corpus.segment(split)), seq_len_(seq_len), batch_size_(batch_size), split_(split), rng_(seed) {
  if (seq_len == 0) throw ConfigError("seq_len", "must be positive");
  if (batch_size == 0) throw ConfigError("batch_size", "must be positive");
  if (segment_.size() <= seq_len) {
    throw ConfigError("seq_len", std::string(split == Split::train ? "train" : "eval") + " segment of " +
                                     std::to_string(segment_.size()) + " tokens is too short for windows of " +
                                     std::to_string(seq_len));
  }
  if (split == Split::eval) {
    windows_ = (segment_.size() - 1) / seq_len;
    dropped_ = segment_.size() - 1 - windows_ * seq_len;
  }
}

TokenBatch BatchStream::fill(std::span<const std::size_t> starts) const {
  TokenBatch batch;
  batch.inputs.shape = {starts.size(), seq_len_};
  batch.targets.shape = {starts.size(), seq_len_};
  batch.inputs.values.reserve(starts.size() * seq_len_);
  batch.targets.values.reserve(starts.size() * seq_len_);
  for (std::size_t s : starts) {
    batch.inputs.values.insert(batch.inputs.values.end(), segment_.begin() + static_cast<std::ptrdiff_t>(s),
                               segment_.begin() + static_cast<std::ptrdiff_t>(s + seq_len_));
    batch.targets.values.insert(batch.targets.values.end(), segment_.begin() + static_cast<std::ptrdiff_t>(s + 1),
                                segment_.begin() + static_cast<std::ptrdiff_t>(s + seq_len_ + 1));
  }
  return batch;
}

std::optional<TokenBatch> BatchStream::next() {
  std::vector<std::size_t> starts;
  if (split_ == Split::train) {
    std::uniform_int_distribution<std::size_t> pick(0, segment_.size() - seq_len_ - 1);
    for (std::size_t b = 0; b < batch_size_; ++b) starts.push_back(pick(rng_));
  } else {
    for (; cursor_ < windows_ && starts.size() < batch_size_; ++cursor_) starts.push_back(cursor_ * seq_len_);
    if (starts.empty()) return std::nullopt;
  }
  return fill(starts);
}

std::string BatchStream::rng_state() const {
  std::ostringstream out;
  out << rng_ << ' ' << cursor_;
  return out.str();
}

void BatchStream::set_rng_state(const std::string& state) {
  std::istringstream in(state);
  in >> rng_ >> cursor_;
  if (!in) throw IngestionError("malformed sampler state");
}

double unigram_entropy(std::span<const std::int32_t> tokens, std::size_t vocab_size) {
  std::vector<std::size_t> counts(vocab_size, 0);
  for (std::int32_t t : tokens) ++counts.at(static_cast<std::size_t>(t));
  const auto n = static_cast<double>(tokens.size());
  double h = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace carope::data
