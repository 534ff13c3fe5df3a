#include "rapa/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

namespace rapa {

namespace {

struct Entry {
  std::string key;
  std::string value;
  std::string where;  // "file:line" or "flag --key"
};

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void fail(const Entry& e, const std::string& what) {
  throw Error(e.where + ": key '" + e.key + "': " + what);
}

std::vector<Entry> parse_entries(const std::string& text, const std::string& source) {
  std::vector<Entry> out;
  std::istringstream in(text);
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = source + ":" + std::to_string(number);
    if (eq == std::string::npos) throw Error(where + ": expected 'key = value', got '" + body + "'");
    Entry e{trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)),
            where};
    if (e.key.empty()) throw Error(where + ": missing key before '='");
    out.push_back(std::move(e));
  }
  return out;
}

template <typename N>
N parse_number(const Entry& e, std::string_view text) {
  N value{};
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, value);
  if (text.empty() || res.ec != std::errc{} || res.ptr != end) {
    fail(e, "cannot parse '" + std::string(text) + "' as a number");
  }
  return value;
}

std::size_t to_size(const Entry& e) { return parse_number<std::size_t>(e, e.value); }
std::uint64_t to_u64(const Entry& e) { return parse_number<std::uint64_t>(e, e.value); }
double to_real(const Entry& e) { return parse_number<double>(e, e.value); }

std::size_t to_positive(const Entry& e) {
  const std::size_t v = to_size(e);
  if (v == 0) fail(e, "must be positive");
  return v;
}

bool to_bool(const Entry& e) {
  std::string v = e.value;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
  if (v == "false" || v == "no" || v == "0" || v == "off") return false;
  fail(e, "cannot parse '" + e.value + "' as a boolean");
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream in(text);
  while (std::getline(in, part, sep)) parts.push_back(trim(part));
  return parts;
}

template <typename N>
std::vector<N> to_list(const Entry& e) {
  std::vector<N> out;
  for (const auto& part : split(e.value, ',')) out.push_back(parse_number<N>(e, part));
  if (out.empty()) fail(e, "empty list");
  return out;
}

template <typename F>
auto wrap(const Entry& e, F&& f) {
  try {
    return f();
  } catch (const Error& err) {
    fail(e, err.what());
  }
}

// Applies a network key; returns false for keys it does not know.
bool apply_network_key(NetworkConfig& cfg, const Entry& e) {
  if (e.key == "channels") {
    cfg.channels = to_list<std::size_t>(e);
    for (auto c : cfg.channels) {
      if (c == 0) fail(e, "channel counts must be positive");
    }
  } else if (e.key == "tiles") {
    cfg.tiles = to_list<std::size_t>(e);
    for (auto t : cfg.tiles) {
      if (t == 0) fail(e, "tile counts must be positive");
    }
  } else if (e.key == "scheme") {
    cfg.scheme = wrap(e, [&] { return parse_scheme(e.value); });
  } else if (e.key == "pooling") {
    cfg.pooling = wrap(e, [&] { return parse_pool_kind(e.value); });
  } else if (e.key == "input_side") {
    cfg.input_side = to_positive(e);
  } else if (e.key == "input_channels") {
    cfg.input_channels = to_positive(e);
  } else if (e.key == "kernel") {
    cfg.kernel = to_positive(e);
  } else if (e.key == "classes") {
    cfg.classes = to_positive(e);
  } else if (e.key == "init_std") {
    cfg.init_std = to_real(e);
    if (!(cfg.init_std >= 0.0)) fail(e, "must be non-negative");
  } else if (e.key == "mix_mu") {
    cfg.mix_mu = to_real(e);
    if (!(cfg.mix_mu > 0.0)) fail(e, "must be positive");
  } else if (e.key == "lrn_size") {
    cfg.lrn.local_size = to_positive(e);
    if (cfg.lrn.local_size % 2 == 0) fail(e, "must be odd");
  } else if (e.key == "lrn_alpha") {
    cfg.lrn.alpha = to_real(e);
  } else if (e.key == "lrn_beta") {
    cfg.lrn.beta = to_real(e);
  } else {
    return false;
  }
  return true;
}

CostLayerSpec to_cost_layer(const Entry& e) {
  std::vector<std::string> parts;
  std::istringstream in(e.value);
  for (std::string p; in >> p;) parts.push_back(p);
  if (parts.size() != 4 && parts.size() != 5) {
    fail(e, "expected 'name n_p k c_out [tiles]', got '" + e.value + "'");
  }
  CostLayerSpec spec;
  spec.name = parts[0];
  spec.patches = parse_number<std::uint64_t>(e, parts[1]);
  spec.patch_size = parse_number<std::uint64_t>(e, parts[2]);
  spec.c_out = parse_number<std::uint64_t>(e, parts[3]);
  if (parts.size() == 5) spec.tiles = parse_number<std::uint64_t>(e, parts[4]);
  if (spec.patches == 0 || spec.patch_size == 0 || spec.c_out == 0 || spec.tiles == 0) {
    fail(e, "cost layer fields must be positive");
  }
  return spec;
}

RunConfig build(std::vector<Entry> entries, const ConfigOverrides& overrides) {
  std::map<std::string, Entry> last;
  std::vector<Entry> cost_entries;
  for (const auto& e : entries) {
    if (e.key == "cost_layer") {
      cost_entries.push_back(e);
      continue;
    }
    if (last.count(e.key)) throw Error(e.where + ": key '" + e.key + "' repeats " + last[e.key].where);
    last[e.key] = e;
  }
  for (const auto& [key, value] : overrides) {
    Entry e{key, trim(value), "flag --" + key};
    if (key == "cost_layer") {
      cost_entries.push_back(e);
    } else {
      last[key] = e;
    }
  }

  RunConfig cfg;
  std::optional<Entry> lr, lr_gamma, warmup;
  const Entry* network_anchor = nullptr;
  for (const auto& [key, e] : last) {
    if (apply_network_key(cfg.network, e)) {
      if (key == "tiles" || (key == "scheme" && !network_anchor)) network_anchor = &e;
      continue;
    }
    if (key == "data") {
      cfg.data = e.value;
    } else if (key == "out") {
      cfg.out = e.value;
    } else if (key == "checkpoint") {
      cfg.checkpoint = e.value;
    } else if (key == "lr") {
      lr = e;
    } else if (key == "lr_gamma") {
      lr_gamma = e;
    } else if (key == "warmup") {
      warmup = e;
    } else if (key == "anneal_period") {
      cfg.train.anneal_period = to_positive(e);
    } else if (key == "decay") {
      cfg.train.decay = to_real(e);
      if (!(cfg.train.decay >= 0.0)) fail(e, "must be non-negative");
    } else if (key == "batch") {
      cfg.train.batch = to_positive(e);
    } else if (key == "epochs") {
      cfg.train.epochs = to_size(e);
    } else if (key == "augment") {
      cfg.train.augment = to_bool(e);
    } else if (key == "seed") {
      cfg.seed = to_u64(e);
    } else if (key == "subset") {
      cfg.subset = to_size(e);
    } else if (key == "test_subset") {
      cfg.test_subset = to_size(e);
    } else if (key == "votes") {
      cfg.votes = to_positive(e);
    } else if (key == "eps") {
      cfg.eps_grid = to_list<double>(e);
      for (double v : cfg.eps_grid) {
        if (!(v >= 0.0)) fail(e, "eps values must be non-negative");
      }
    } else if (key == "attack_images") {
      cfg.attack_images = to_size(e);
    } else if (key == "workers") {
      cfg.workers = static_cast<int>(to_size(e));
    } else if (key == "eval_each_epoch") {
      cfg.eval_each_epoch = to_bool(e);
    } else if (key == "theory_instances") {
      cfg.theory_instances = to_positive(e);
    } else if (key == "theory_max_dims") {
      cfg.theory_max_dims = to_positive(e);
    } else if (key == "theory_max_tiles") {
      cfg.theory_max_tiles = to_positive(e);
    } else if (key == "theory_examples") {
      cfg.theory_examples = to_positive(e);
    } else if (key == "synth_train_per_batch") {
      cfg.synth_train_per_batch = to_positive(e);
    } else if (key == "synth_test") {
      cfg.synth_test = to_positive(e);
    } else {
      throw Error(e.where + ": unknown key '" + key + "'");
    }
  }
  for (const auto& e : cost_entries) cfg.cost_layers.push_back(to_cost_layer(e));

  // Tiles without an explicit scheme select random assignment.
  if (!last.count("scheme") && cfg.network.tiled()) cfg.network.scheme = SchemeKind::random;
  if (last.count("tiles") && !last.count("channels") &&
      cfg.network.tiles.size() != cfg.network.channels.size()) {
    fail(last["tiles"], "lists " + std::to_string(cfg.network.tiles.size()) + " layers, network has " +
                            std::to_string(cfg.network.channels.size()));
  }
  try {
    cfg.network.validate();
  } catch (const Error& err) {
    if (network_anchor) fail(*network_anchor, err.what());
    throw Error(std::string("network: ") + err.what());
  }

  const TrainConfig defaults = TrainConfig::defaults(cfg.network.tiled());
  cfg.train.lr = lr ? to_real(*lr) : defaults.lr;
  cfg.train.lr_gamma = lr_gamma ? to_real(*lr_gamma) : defaults.lr_gamma;
  cfg.train.warmup = warmup ? to_size(*warmup) : defaults.warmup;
  cfg.train.seed = cfg.seed;
  if (lr && !(cfg.train.lr > 0.0)) fail(*lr, "must be positive");
  if (lr_gamma && !(cfg.train.lr_gamma > 0.0 && cfg.train.lr_gamma <= 1.0)) {
    fail(*lr_gamma, "must lie in (0, 1]");
  }
  cfg.train.validate();
  return cfg;
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& source,
                            const ConfigOverrides& overrides) {
  return build(parse_entries(text, source), overrides);
}

RunConfig parse_config(const std::filesystem::path& path, const ConfigOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str(), path.string(), overrides);
}

RunConfig default_config(const ConfigOverrides& overrides) { return build({}, overrides); }

std::string network_to_text(const NetworkConfig& cfg) {
  auto list = [](const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  std::ostringstream out;
  out << "channels = " << list(cfg.channels) << '\n'
      << "tiles = " << list(cfg.tiles) << '\n'
      << "scheme = " << scheme_name(cfg.scheme) << '\n'
      << "pooling = " << pool_kind_name(cfg.pooling) << '\n'
      << "input_side = " << cfg.input_side << '\n'
      << "input_channels = " << cfg.input_channels << '\n'
      << "kernel = " << cfg.kernel << '\n'
      << "classes = " << cfg.classes << '\n'
      << "init_std = " << format_real(cfg.init_std) << '\n'
      << "mix_mu = " << format_real(cfg.mix_mu) << '\n'
      << "lrn_size = " << cfg.lrn.local_size << '\n'
      << "lrn_alpha = " << format_real(cfg.lrn.alpha) << '\n'
      << "lrn_beta = " << format_real(cfg.lrn.beta) << '\n';
  return out.str();
}

NetworkConfig parse_network_text(const std::string& text, const std::string& source) {
  NetworkConfig cfg;
  for (const auto& e : parse_entries(text, source)) {
    if (!apply_network_key(cfg, e)) throw Error(e.where + ": unknown network key '" + e.key + "'");
  }
  cfg.validate();
  return cfg;
}

}  // namespace rapa
