#include "carope/cli/run_config.hpp"

#include <charconv>
#include <fmt/format.h>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "carope/errors.hpp"

namespace carope::cli {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::size_t to_size(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key, "expected a non-negative integer, got '" + value + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key, "expected a non-negative integer, got '" + value + "'");
  return out;
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double out = std::stod(value, &used);
    if (used == value.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError(key, "expected a number, got '" + value + "'");
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + value + "'");
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"n_layers", [](RunConfig& c, auto& k, auto& v) { c.model.n_layers = to_size(k, v); }},
      {"n_heads", [](RunConfig& c, auto& k, auto& v) { c.model.n_heads = to_size(k, v); }},
      {"d_model", [](RunConfig& c, auto& k, auto& v) { c.model.d_model = to_size(k, v); }},
      {"vocab_size", [](RunConfig& c, auto& k, auto& v) { c.model.vocab_size = to_size(k, v); }},
      {"max_context", [](RunConfig& c, auto& k, auto& v) { c.model.max_context = to_size(k, v); }},
      {"encoding",
       [](RunConfig& c, auto& k, auto& v) {
         try {
           c.model.encoding = posenc::parse_encoding(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(k, e.what());
         }
       }},
      {"tie_embeddings", [](RunConfig& c, auto& k, auto& v) { c.model.tie_embeddings = to_bool(k, v); }},
      {"seed",
       [](RunConfig& c, auto& k, auto& v) {
         c.model.seed = to_u64(k, v);
         c.train.seed = c.model.seed;
         c.bench.seed = c.model.seed;
         c.gradcheck.seed = c.model.seed;
       }},
      {"max_lr", [](RunConfig& c, auto& k, auto& v) { c.train.max_lr = to_double(k, v); }},
      {"min_lr", [](RunConfig& c, auto& k, auto& v) { c.train.min_lr = to_double(k, v); }},
      {"warmup_steps", [](RunConfig& c, auto& k, auto& v) { c.train.warmup_steps = to_size(k, v); }},
      {"steps", [](RunConfig& c, auto& k, auto& v) { c.train.total_steps = to_size(k, v); }},
      {"tokens_per_update", [](RunConfig& c, auto& k, auto& v) { c.train.tokens_per_update = to_size(k, v); }},
      {"batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = to_size(k, v); }},
      {"seq_len", [](RunConfig& c, auto& k, auto& v) { c.train.seq_len = to_size(k, v); }},
      {"weight_decay", [](RunConfig& c, auto& k, auto& v) { c.train.weight_decay = to_double(k, v); }},
      {"beta1", [](RunConfig& c, auto& k, auto& v) { c.train.beta1 = to_double(k, v); }},
      {"beta2", [](RunConfig& c, auto& k, auto& v) { c.train.beta2 = to_double(k, v); }},
      {"eps", [](RunConfig& c, auto& k, auto& v) { c.train.eps = to_double(k, v); }},
      {"grad_clip", [](RunConfig& c, auto& k, auto& v) { c.train.grad_clip = to_double(k, v); }},
      {"checkpoint_interval", [](RunConfig& c, auto& k, auto& v) { c.train.checkpoint_interval = to_size(k, v); }},
      {"corpus", [](RunConfig& c, auto&, auto& v) { c.corpus = v; }},
      {"eval_fraction", [](RunConfig& c, auto& k, auto& v) { c.eval_fraction = to_double(k, v); }},
      {"tokenizer",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "auto") c.tokenizer = data::TokenizerKind::automatic;
         else if (v == "bytes") c.tokenizer = data::TokenizerKind::bytes;
         else if (v == "ctok") c.tokenizer = data::TokenizerKind::pretokenized;
         else throw ConfigError(k, "expected auto, bytes or ctok, got '" + v + "'");
       }},
      {"out", [](RunConfig& c, auto&, auto& v) { c.out_dir = v; }},
      {"eval_lengths",
       [](RunConfig& c, auto& k, auto& v) {
         try {
           c.eval_lengths = parse_lengths(v);
         } catch (const ConfigError& e) {
           throw ConfigError(k, e.what());
         }
       }},
      {"eval_batch", [](RunConfig& c, auto& k, auto& v) { c.eval_batch = to_size(k, v); }},
      {"bench_warmup", [](RunConfig& c, auto& k, auto& v) { c.bench.n_warmup = to_size(k, v); }},
      {"bench_timed", [](RunConfig& c, auto& k, auto& v) { c.bench.n_timed = to_size(k, v); }},
      {"gradcheck_tolerance", [](RunConfig& c, auto& k, auto& v) { c.gradcheck.tolerance = to_double(k, v); }},
      {"gradcheck_step", [](RunConfig& c, auto& k, auto& v) { c.gradcheck.step_size = to_double(k, v); }},
      {"gradcheck_batch", [](RunConfig& c, auto& k, auto& v) { c.gradcheck.batch_size = to_size(k, v); }},
      {"gradcheck_seq_len", [](RunConfig& c, auto& k, auto& v) { c.gradcheck.seq_len = to_size(k, v); }},
  };
  return table;
}

}  // namespace

KeyValues parse_config_text(std::string_view text) {
  KeyValues out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(fmt::format("line {}", line_no), "expected 'key = value', got '" + std::string(line) + "'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(fmt::format("line {}", line_no), "missing key");
    out.emplace_back(std::string(key), std::string(value));
  }
  return out;
}

KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void apply_pairs(RunConfig& cfg, const KeyValues& pairs) {
  const auto& table = setters();
  for (const auto& [key, value] : pairs) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError(key, "unknown configuration key");
    it->second(cfg, key, value);
  }
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const KeyValues& overrides) {
  RunConfig cfg;
  if (file) apply_pairs(cfg, read_config_file(*file));
  apply_pairs(cfg, overrides);
  return cfg;
}

std::vector<std::size_t> parse_lengths(std::string_view csv) {
  std::vector<std::size_t> out;
  while (!csv.empty()) {
    const auto comma = csv.find(',');
    const std::string item(trim(csv.substr(0, comma)));
    csv = comma == std::string_view::npos ? std::string_view{} : csv.substr(comma + 1);
    const std::size_t n = to_size("lengths", item);
    if (n == 0) throw ConfigError("lengths", "lengths must be positive");
    out.push_back(n);
  }
  if (out.empty()) throw ConfigError("lengths", "no lengths given");
  return out;
}

std::vector<std::size_t> RunConfig::lengths() const {
  if (!eval_lengths.empty()) return eval_lengths;
  return {model.max_context, 2 * model.max_context};
}

void RunConfig::validate(bool need_corpus) const {
  model.validate();
  train.validate();
  if (model.encoding == posenc::EncodingKind::learnable && train.seq_len > model.max_context) {
    throw ConfigError("seq_len", fmt::format("learnable positions stop at max_context = {}", model.max_context));
  }
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) throw ConfigError("eval_fraction", "must lie in (0, 1)");
  if (eval_batch == 0) throw ConfigError("eval_batch", "must be positive");
  if (bench.n_timed < 3) throw ConfigError("bench_timed", "must be at least 3");
  if (!(gradcheck.tolerance > 0.0)) throw ConfigError("gradcheck_tolerance", "must be positive");
  if (!(gradcheck.step_size > 0.0)) throw ConfigError("gradcheck_step", "must be positive");
  if (gradcheck.batch_size == 0) throw ConfigError("gradcheck_batch", "must be positive");
  if (gradcheck.seq_len == 0) throw ConfigError("gradcheck_seq_len", "must be positive");
  if (need_corpus) {
    if (corpus.empty()) throw ConfigError("corpus", "no corpus path configured");
    if (!std::filesystem::is_regular_file(corpus)) throw ConfigError("corpus", "'" + corpus.string() + "' does not exist");
  }
}

std::string RunConfig::to_text() const {
  const auto tok = tokenizer == data::TokenizerKind::bytes          ? "bytes"
                   : tokenizer == data::TokenizerKind::pretokenized ? "ctok"
                                                                    : "auto";
  std::string lengths_csv;
  for (std::size_t n : eval_lengths) lengths_csv += (lengths_csv.empty() ? "" : ",") + std::to_string(n);
  std::string out;
  out += fmt::format("n_layers = {}\nn_heads = {}\nd_model = {}\nvocab_size = {}\nmax_context = {}\n", model.n_layers,
                     model.n_heads, model.d_model, model.vocab_size, model.max_context);
  out += fmt::format("encoding = {}\ntie_embeddings = {}\nseed = {}\n", posenc::to_string(model.encoding),
                     model.tie_embeddings, model.seed);
  out += fmt::format("max_lr = {}\nmin_lr = {}\nwarmup_steps = {}\nsteps = {}\ntokens_per_update = {}\n", train.max_lr,
                     train.min_lr, train.warmup_steps, train.total_steps, train.tokens_per_update);
  out += fmt::format("batch_size = {}\nseq_len = {}\nweight_decay = {}\nbeta1 = {}\nbeta2 = {}\neps = {}\n",
                     train.batch_size, train.seq_len, train.weight_decay, train.beta1, train.beta2, train.eps);
  out += fmt::format("grad_clip = {}\ncheckpoint_interval = {}\n", train.grad_clip, train.checkpoint_interval);
  out += fmt::format("corpus = {}\neval_fraction = {}\ntokenizer = {}\nout = {}\n", corpus.string(), eval_fraction, tok,
                     out_dir.string());
  if (!lengths_csv.empty()) out += "eval_lengths = " + lengths_csv + "\n";
  out += fmt::format("eval_batch = {}\nbench_warmup = {}\nbench_timed = {}\n", eval_batch, bench.n_warmup, bench.n_timed);
  out += fmt::format("gradcheck_tolerance = {}\ngradcheck_step = {}\ngradcheck_batch = {}\ngradcheck_seq_len = {}\n",
                     gradcheck.tolerance, gradcheck.step_size, gradcheck.batch_size, gradcheck.seq_len);
  return out;
}

}  // namespace carope::cli
