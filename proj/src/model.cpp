// SPDX-License-Identifier: Apache-2.0
#include "faststi/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "faststi/rng.hpp"
#include "json.hpp"

namespace faststi {

namespace {

constexpr int kCheckpointVersion = 1;

std::uint64_t fnv1a(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["residual_layers"] = c.residual_layers;
  j["residual_channels"] = c.residual_channels;
  j["attention_heads"] = c.attention_heads;
  j["time_embedding_dim"] = c.time_embedding_dim;
  j["k_steps"] = c.k_steps;
  j["rho"] = c.rho;
  j["cross_attention_cond_qv"] = c.cross_attention_cond_qv;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  static const char* keys[] = {"residual_layers",    "residual_channels",
                               "attention_heads",    "time_embedding_dim",
                               "k_steps",            "rho",
                               "cross_attention_cond_qv"};
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (auto* k : keys) known |= key == k;
    if (!known) throw std::invalid_argument("unknown model config key: " + key);
  }
  ModelConfig c;
  c.residual_layers = j.at("residual_layers").get<int>();
  c.residual_channels = j.at("residual_channels").get<int>();
  c.attention_heads = j.at("attention_heads").get<int>();
  c.time_embedding_dim = j.at("time_embedding_dim").get<int>();
  c.k_steps = j.at("k_steps").get<int>();
  c.rho = j.at("rho").get<double>();
  if (j.contains("cross_attention_cond_qv"))
    c.cross_attention_cond_qv = j.at("cross_attention_cond_qv").get<bool>();
  if (c.residual_layers < 1 || c.residual_channels < 1 ||
      c.attention_heads < 1 || c.time_embedding_dim < 1 || c.k_steps < 0)
    throw std::invalid_argument("model config values must be positive");
  if (c.residual_channels % c.attention_heads != 0)
    throw std::invalid_argument("channels must be divisible by heads");
  return c;
}

std::size_t ParamStore::add(const std::string& name,
                            std::vector<std::size_t> shape) {
  Entry e;
  e.name = name;
  e.offset = values.size();
  e.shape = std::move(shape);
  values.resize(e.offset + e.numel(), 0.0);
  entries.push_back(std::move(e));
  return entries.back().offset;
}

const ParamStore::Entry& ParamStore::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw std::out_of_range("no such parameter: " + name);
}

namespace {

void register_attention(ParamStore& s, const std::string& prefix, std::size_t C) {
  s.add(prefix + ".Wq", {C, C});
  s.add(prefix + ".Wk", {C, C});
  s.add(prefix + ".Wv", {C, C});
  s.add(prefix + ".Wo", {C, C});
  s.add(prefix + ".ln_g", {C});
  s.add(prefix + ".ln_b", {C});
}

void register_dgcn(ParamStore& s, const std::string& prefix, std::size_t C, int K) {
  for (int k = 0; k <= K; ++k) {
    s.add(prefix + ".thf" + std::to_string(k), {C, C});
    s.add(prefix + ".thr" + std::to_string(k), {C, C});
  }
  s.add(prefix + ".ln_g", {C});
  s.add(prefix + ".ln_b", {C});
}

void register_all(ParamStore& s, const ModelConfig& c) {
  const std::size_t C = c.residual_channels;
  const std::size_t M = c.time_embedding_dim;
  s.add("in.cond.W", {1, C});
  s.add("in.cond.b", {C});
  register_attention(s, "prior.tem", C);
  register_attention(s, "prior.spa", C);
  register_dgcn(s, "prior.dgcn", C, c.k_steps);
  s.add("prior.mlp.W1", {C, C});
  s.add("prior.mlp.b1", {C});
  s.add("prior.mlp.W2", {C, C});
  s.add("prior.mlp.b2", {C});
  s.add("in.noise.W", {2, C});
  s.add("in.noise.b", {C});
  for (int l = 0; l < c.residual_layers; ++l) {
    const std::string p = "block" + std::to_string(l);
    s.add(p + ".temb.W", {M, C});
    s.add(p + ".temb.b", {C});
    register_attention(s, p + ".tem", C);
    register_attention(s, p + ".spa", C);
    register_dgcn(s, p + ".dgcn", C, c.k_steps);
    s.add(p + ".res.W", {C, C});
    s.add(p + ".res.b", {C});
    s.add(p + ".skip.W", {C, C});
    s.add(p + ".skip.b", {C});
  }
  s.add("out.1.W", {C, C});
  s.add("out.1.b", {C});
  s.add("out.2.W", {C, 1});
  s.add("out.2.b", {1});
}

}  // namespace

ModelParams init_model_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams mp;
  mp.config = config;
  register_all(mp.store, config);

  Rng rng(seed);
  for (const auto& e : mp.store.entries) {
    double* p = mp.store.values.data() + e.offset;
    const bool is_weight = e.shape.size() == 2;
    const bool is_gain = e.name.size() > 4 &&
                         e.name.compare(e.name.size() - 4, 4, "ln_g") == 0;
    if (e.name == "out.2.W" || e.name == "out.2.b") {
      // zero final layer: the untrained model predicts zero noise
      continue;
    }
    if (is_gain) {
      for (std::size_t i = 0; i < e.numel(); ++i) p[i] = 1.0;
    } else if (is_weight) {
      const double limit = std::sqrt(6.0 / (e.shape[0] + e.shape[1]));
      for (std::size_t i = 0; i < e.numel(); ++i)
        p[i] = limit * (2.0 * rng.uniform() - 1.0);
    }
    // biases and ln_b stay zero
  }
  return mp;
}

Tensor lin_interp(const Tensor& observed, const Mask& observed_mask,
                  double fill_value) {
  const std::size_t L = observed.dim(0), N = observed.dim(1);
  Tensor chi({L, N});
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<std::size_t> obs;
    for (std::size_t l = 0; l < L; ++l)
      if (observed_mask.at(l, n)) obs.push_back(l);
    if (obs.empty()) {
      for (std::size_t l = 0; l < L; ++l) chi(l, n) = fill_value;
      continue;
    }
    for (std::size_t l = 0; l < L; ++l) {
      if (l <= obs.front()) {
        chi(l, n) = observed(obs.front(), n);
      } else if (l >= obs.back()) {
        chi(l, n) = observed(obs.back(), n);
      } else {
        auto hi = std::lower_bound(obs.begin(), obs.end(), l);
        if (*hi == l) {
          chi(l, n) = observed(l, n);
        } else {
          const std::size_t b = *hi, a = *(hi - 1);
          const double w = static_cast<double>(l - a) / static_cast<double>(b - a);
          chi(l, n) = (1.0 - w) * observed(a, n) + w * observed(b, n);
        }
      }
    }
  }
  return chi;
}

std::vector<double> time_embedding(double t, int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw std::invalid_argument("time_embedding: dim must be even and >= 2");
  const int half = dim / 2;
  std::vector<double> e(dim);
  for (int j = 0; j < half; ++j) {
    const double div =
        std::pow(10.0, half > 1 ? 4.0 * j / (half - 1) : 0.0);
    e[2 * j] = std::sin(t / div);
    e[2 * j + 1] = std::cos(t / div);
  }
  return e;
}

namespace {

// Per-forward builder; grad == nullptr runs the network with constant
// parameters (no backward bookkeeping).
struct Builder {
  Tape& tape;
  const ModelParams& mp;
  double* grad;

  Var pv(const std::string& name) {
    const auto& e = mp.store.find(name);
    if (grad)
      return tape.param(mp.store.values.data() + e.offset, e.shape,
                        grad + e.offset);
    Tensor t;
    t.shape = e.shape;
    t.data.assign(mp.store.values.begin() + e.offset,
                  mp.store.values.begin() + e.offset + e.numel());
    return tape.constant(std::move(t));
  }

  // residual + normalized multi-head attention; all fields are [L,N,C].
  // temporal attends along the time axis, otherwise along the node axis.
  Var attention(const std::string& prefix, Var res_base, Var q_src, Var k_src,
                Var v_src, bool temporal) {
    const int heads = mp.config.attention_heads;
    if (temporal) {
      q_src = tape.transpose_ln(q_src);
      k_src = tape.transpose_ln(k_src);
      v_src = tape.transpose_ln(v_src);
    }
    const Var q = tape.linear(q_src, pv(prefix + ".Wq"));
    const Var k = tape.linear(k_src, pv(prefix + ".Wk"));
    const Var v = tape.linear(v_src, pv(prefix + ".Wv"));
    Var out = tape.linear(tape.mha(q, k, v, heads), pv(prefix + ".Wo"));
    if (temporal) out = tape.transpose_ln(out);
    return tape.layer_norm(tape.add(res_base, out), pv(prefix + ".ln_g"),
                           pv(prefix + ".ln_b"));
  }

  Var dgcn(const std::string& prefix, Var x, const RoadGraph& g) {
    const std::size_t N = g.n_nodes;
    const int K = mp.config.k_steps;
    Var hop_f = x, hop_r = x;
    Var acc{-1};
    for (int k = 0; k <= K; ++k) {
      if (k > 0) {
        hop_f = tape.node_mix(hop_f, g.forward_transition, N);
        hop_r = tape.node_mix(hop_r, g.reverse_transition, N);
      }
      Var term = tape.add(tape.linear(hop_f, pv(prefix + ".thf" + std::to_string(k))),
                          tape.linear(hop_r, pv(prefix + ".thr" + std::to_string(k))));
      if (k > 0) term = tape.scale(term, mp.config.rho);
      acc = acc.id < 0 ? term : tape.add(acc, term);
    }
    return tape.layer_norm(tape.add(x, acc), pv(prefix + ".ln_g"),
                           pv(prefix + ".ln_b"));
  }

  Var prior(const Tensor& chi, const RoadGraph& g) {
    const std::size_t L = chi.dim(0), N = chi.dim(1);
    Tensor cf;
    cf.shape = {L, N, 1};
    cf.data = chi.data;
    const Var chi_v = tape.constant(std::move(cf));
    const Var H =
        tape.silu(tape.linear(chi_v, pv("in.cond.W"), pv("in.cond.b")));
    const Var tem = attention("prior.tem", H, H, H, H, /*temporal=*/true);
    const Var spa = attention("prior.spa", H, H, H, H, /*temporal=*/false);
    const Var dgc = dgcn("prior.dgcn", H, g);
    const Var sum3 = tape.add(tape.add(tem, spa), dgc);
    const Var mid =
        tape.silu(tape.linear(sum3, pv("prior.mlp.W1"), pv("prior.mlp.b1")));
    return tape.linear(mid, pv("prior.mlp.W2"), pv("prior.mlp.b2"));
  }

  // eps-hat [L,N] for the masked noisy field; hcond is a tape var [L,N,C].
  Var eps(Var hcond, const Tensor& chi, const std::vector<double>& x_masked,
          const std::vector<double>& impute_field, const RoadGraph& g,
          double t) {
    const std::size_t L = chi.dim(0), N = chi.dim(1);
    const std::size_t C = mp.config.residual_channels;

    Tensor xf;
    xf.shape = {L, N, 1};
    xf.data = x_masked;
    Tensor cf;
    cf.shape = {L, N, 1};
    cf.data = chi.data;
    const Var xin = tape.constant(std::move(xf));
    const Var chiv = tape.constant(std::move(cf));
    Var h = tape.silu(tape.linear(tape.concat_channels(chiv, xin),
                                  pv("in.noise.W"), pv("in.noise.b")));

    Tensor emb;
    emb.shape = {1, static_cast<std::size_t>(mp.config.time_embedding_dim)};
    emb.data = time_embedding(t, mp.config.time_embedding_dim);
    const Var emb_v = tape.constant(std::move(emb));

    Var skips{-1};
    const bool cond_qv = mp.config.cross_attention_cond_qv;
    for (int l = 0; l < mp.config.residual_layers; ++l) {
      const std::string p = "block" + std::to_string(l);
      const Var tproj =
          tape.linear(emb_v, pv(p + ".temb.W"), pv(p + ".temb.b"));
      h = tape.add_channel_vec(h, tape.reshape(tproj, {C}));

      const Var q = cond_qv ? hcond : h;
      const Var k = cond_qv ? h : hcond;
      const Var v = hcond;
      h = attention(p + ".tem", h, q, k, v, /*temporal=*/true);
      const Var q2 = cond_qv ? hcond : h;
      const Var k2 = cond_qv ? h : hcond;
      h = attention(p + ".spa", h, q2, k2, v, /*temporal=*/false);
      h = dgcn(p + ".dgcn", h, g);

      const Var res =
          tape.silu(tape.linear(h, pv(p + ".res.W"), pv(p + ".res.b")));
      const Var skip = tape.linear(h, pv(p + ".skip.W"), pv(p + ".skip.b"));
      h = tape.scale(tape.add(h, res), 1.0 / std::sqrt(2.0));
      skips = skips.id < 0 ? skip : tape.add(skips, skip);
    }

    Var s = tape.scale(skips, 1.0 / std::sqrt((double)mp.config.residual_layers));
    s = tape.silu(tape.linear(s, pv("out.1.W"), pv("out.1.b")));
    Var e = tape.linear(s, pv("out.2.W"), pv("out.2.b"));
    e = tape.reshape(e, {L, N});
    return tape.mul_const(e, impute_field);
  }
};

std::vector<double> impute_field_of(const ImputationTask& task) {
  const std::size_t n = task.L() * task.N();
  std::vector<double> f(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    f[i] = (task.target_mask.v[i] || !task.observed_mask.v[i]) ? 1.0 : 0.0;
  return f;
}

std::vector<double> masked_state(const std::vector<double>& x,
                                 const std::vector<double>& field) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * field[i];
  return out;
}

void check_task(const ImputationTask& task) {
  if (!task.graph) throw std::invalid_argument("task has no graph");
  if (task.conditioner.shape != task.observed.shape)
    throw std::invalid_argument("conditioner shape mismatch");
  for (double v : task.conditioner.data)
    if (!std::isfinite(v))
      throw std::invalid_argument("conditioner must be finite");
}

}  // namespace

Tensor conditional_prior(const Tensor& chi, const RoadGraph& graph,
                         const ModelParams& params) {
  Tape tape;
  Builder b{tape, params, nullptr};
  return tape.value(b.prior(chi, graph));
}

Tensor noise_predict(const std::vector<double>& x_noisy,
                     const ImputationTask& task, double t,
                     const ModelParams& params, const Tensor* hcond_cache) {
  check_task(task);
  for (double v : x_noisy)
    if (!std::isfinite(v))
      throw std::invalid_argument("noise_predict: non-finite state");
  Tape tape;
  Builder b{tape, params, nullptr};
  const Var hcond = hcond_cache ? tape.constant(*hcond_cache)
                                : b.prior(task.conditioner, *task.graph);
  const auto field = impute_field_of(task);
  const Var e = b.eps(hcond, task.conditioner, masked_state(x_noisy, field),
                      field, *task.graph, t);
  return tape.value(e);
}

double training_loss_and_grad(const ImputationTask& task,
                              const std::vector<double>& x_noisy,
                              const std::vector<double>& eps_target, double t,
                              const ModelParams& params,
                              std::vector<double>& grad) {
  check_task(task);
  if (grad.size() != params.store.size())
    throw std::invalid_argument("grad buffer size mismatch");
  Tape tape;
  Builder b{tape, params, grad.data()};
  const Var hcond = b.prior(task.conditioner, *task.graph);
  const auto field = impute_field_of(task);
  const Var e = b.eps(hcond, task.conditioner, masked_state(x_noisy, field),
                      field, *task.graph, t);
  const Var loss = tape.masked_mse(e, eps_target, task.target_mask.v);
  tape.backward(loss);
  return tape.value(loss).data[0];
}

double training_loss(const ImputationTask& task,
                     const std::vector<double>& x_noisy,
                     const std::vector<double>& eps_target, double t,
                     const ModelParams& params) {
  check_task(task);
  Tape tape;
  Builder b{tape, params, nullptr};
  const Var hcond = b.prior(task.conditioner, *task.graph);
  const auto field = impute_field_of(task);
  const Var e = b.eps(hcond, task.conditioner, masked_state(x_noisy, field),
                      field, *task.graph, t);
  const Var loss = tape.masked_mse(e, eps_target, task.target_mask.v);
  return tape.value(loss).data[0];
}

ModelPredictor::ModelPredictor(const ModelParams& params,
                               const ImputationTask& task)
    : params_(params), task_(task) {
  check_task(task);
  hcond_ = conditional_prior(task.conditioner, *task.graph, params);
}

std::vector<double> ModelPredictor::eval(const std::vector<double>& x,
                                         const Tensor*, const RoadGraph*,
                                         double t) const {
  return noise_predict(x, task_, t, params_, &hcond_).data;
}

void save_model_params(const std::string& path, const ModelParams& params) {
  const auto* bytes =
      reinterpret_cast<const unsigned char*>(params.store.values.data());
  const std::size_t nbytes = params.store.values.size() * sizeof(double);
  char checksum[24];
  std::snprintf(checksum, sizeof(checksum), "%016llx",
                static_cast<unsigned long long>(fnv1a(bytes, nbytes)));

  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["format"] = "faststi-params";
  header["config"] = nlohmann::json::parse(model_config_to_json(params.config));
  header["param_count"] = params.store.values.size();
  header["checksum"] = checksum;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(bytes),
            static_cast<std::streamsize>(nbytes));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

ModelParams load_model_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string header_line;
  if (!std::getline(in, header_line))
    throw std::runtime_error("checkpoint missing header: " + path);
  const auto header = nlohmann::json::parse(header_line);
  if (!header.contains("version"))
    throw std::runtime_error("checkpoint header missing version");
  if (header.at("version").get<int>() != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version");

  ModelParams mp;
  mp.config = model_config_from_json(header.at("config").dump());
  register_all(mp.store, mp.config);
  const auto count = header.at("param_count").get<std::size_t>();
  if (count != mp.store.values.size())
    throw std::runtime_error("checkpoint parameter count mismatch");

  in.read(reinterpret_cast<char*>(mp.store.values.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double))
    throw std::runtime_error("checkpoint truncated: " + path);

  char checksum[24];
  std::snprintf(checksum, sizeof(checksum), "%016llx",
                static_cast<unsigned long long>(fnv1a(
                    reinterpret_cast<const unsigned char*>(mp.store.values.data()),
                    count * sizeof(double))));
  if (header.at("checksum").get<std::string>() != checksum)
    throw std::runtime_error("checkpoint checksum mismatch: " + path);
  return mp;
}

}  // namespace faststi
