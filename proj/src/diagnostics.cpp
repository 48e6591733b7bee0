#include "capslab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "capslab/objective.hpp"

namespace caps {

using json = nlohmann::ordered_json;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path, const char* who) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(std::string(who) + ": cannot open " + path);
  return out;
}

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape}, {"data", t.data}};
}

double capsule_norm(const Tensor& caps, long row) {
  double s = 0;
  for (long e = 0; e < caps.dim(1); ++e) s += caps.at(row, e) * caps.at(row, e);
  return std::sqrt(s);
}

}  // namespace

DatasetTrace collect_trace(const ArchitectureSpec& arch, const ModelParams& params,
                           const std::vector<Tensor>& images) {
  if (images.empty()) throw std::runtime_error("collect_trace: empty dataset");
  DatasetTrace trace;
  std::vector<long> counts = arch.layer_caps_counts();
  long S = (long)images.size();
  for (long c : counts) trace.norms.emplace_back(shape_t{S, c});
  trace.couplings.resize(counts.size() - 1);

  for (long s = 0; s < S; ++s) {
    Tape tape;
    tape.recording = false;
    ForwardTrace tr = forward(tape, arch, params, nullptr, images[(size_t)s], -1, false);
    for (size_t l = 0; l < tr.layer_caps.size(); ++l) {
      for (long i = 0; i < counts[l]; ++i) {
        trace.norms[l].at(s, i) = capsule_norm(tr.layer_caps[l], i);
      }
    }
    for (size_t r = 0; r < tr.couplings.size(); ++r) {
      trace.couplings[r].push_back(tr.couplings[r]);
    }
  }
  return trace;
}

std::vector<LayerStats> layer_statistics(const DatasetTrace& trace, double tau_act,
                                         double tau_dead) {
  if (trace.samples() == 0) throw std::runtime_error("layer_statistics: empty trace");
  if (!(tau_act > 0 && tau_act < 1 && tau_dead > 0 && tau_dead < 1)) {
    throw std::runtime_error("layer_statistics: thresholds must be in (0,1)");
  }
  std::vector<LayerStats> out;
  long S = trace.samples();
  for (size_t l = 0; l < trace.norms.size(); ++l) {
    const Tensor& norms = trace.norms[l];
    long n = norms.dim(1);
    LayerStats st;
    st.layer = (long)l;
    st.n = n;
    st.dead.assign((size_t)n, 1);

    double active_total = 0;
    for (long s = 0; s < S; ++s) {
      for (long i = 0; i < n; ++i) {
        double v = norms.at(s, i);
        if (v >= tau_act) active_total += 1;
        if (v >= tau_dead) st.dead[(size_t)i] = 0;
      }
    }
    // cns as the sum of per-capsule means, cnm as the grand mean; the
    // cns = n*cnm identity then holds by construction to rounding
    double cns = 0;
    for (long i = 0; i < n; ++i) {
      double m = 0;
      for (long s = 0; s < S; ++s) m += norms.at(s, i);
      cns += m / (double)S;
    }
    st.cns = cns;
    st.cnm = cns / (double)n;
    st.cas = active_total / (double)S;
    st.car = st.cas / (double)n;
    st.cds = std::count(st.dead.begin(), st.dead.end(), (char)1);
    st.cdr = (double)st.cds / (double)n;
    out.push_back(std::move(st));
  }
  return out;
}

void write_layer_stats_csv(const std::vector<LayerStats>& stats, const std::string& path) {
  std::ofstream out = open_out(path, "write_layer_stats_csv");
  out << "layer,capsules,cnm,cns,car,cas,cdr,cds\n";
  for (const LayerStats& st : stats) {
    out << st.layer << ',' << st.n << ',' << fmt(st.cnm) << ',' << fmt(st.cns) << ','
        << fmt(st.car) << ',' << fmt(st.cas) << ',' << fmt(st.cdr) << ',' << st.cds << "\n";
  }
}

std::vector<DynamicsStats> routing_dynamics(const DatasetTrace& trace, double tau_dead) {
  long S = trace.samples();
  if (S == 0) throw std::runtime_error("routing_dynamics: empty trace");
  std::vector<DynamicsStats> out;
  for (size_t r = 0; r < trace.couplings.size(); ++r) {
    const std::vector<Tensor>& mats = trace.couplings[r];
    long nl = mats[0].dim(0), nu = mats[0].dim(1);

    auto alive = [&](const Tensor& norms, long i) {
      for (long s = 0; s < S; ++s)
        if (norms.at(s, i) >= tau_dead) return true;
      return false;
    };

    DynamicsStats st;
    st.routing_layer = (long)r;
    for (long i = 0; i < nl; ++i)
      if (alive(trace.norms[r], i)) ++st.alive_from_lower;
    for (long j = 0; j < nu; ++j)
      if (alive(trace.norms[r + 1], j)) ++st.alive_to_higher;

    Tensor mean({nl, nu});
    for (const Tensor& m : mats)
      for (long i = 0; i < nl * nu; ++i) mean[i] += m[i];
    for (long i = 0; i < nl * nu; ++i) mean[i] /= (double)S;

    st.dynamics.assign((size_t)nl, 0.0);
    for (long i = 0; i < nl; ++i) {
      if (!alive(trace.norms[r], i)) continue;
      double acc = 0;
      for (const Tensor& m : mats) {
        double l1 = 0;
        for (long j = 0; j < nu; ++j) l1 += std::fabs(m.at(i, j) - mean.at(i, j));
        acc += l1;
      }
      st.dynamics[(size_t)i] = acc / (double)S;
      st.dys += st.dynamics[(size_t)i];
    }
    st.dyr = st.alive_to_higher > 0 ? st.dys / (double)st.alive_to_higher : 0.0;
    out.push_back(std::move(st));
  }
  return out;
}

void write_dynamics_csv(const std::vector<DynamicsStats>& stats, const std::string& path) {
  std::ofstream out = open_out(path, "write_dynamics_csv");
  out << "routing_layer,alive_from_lower,alive_to_higher,dys,dyr\n";
  for (const DynamicsStats& st : stats) {
    out << st.routing_layer << ',' << st.alive_from_lower << ',' << st.alive_to_higher << ','
        << fmt(st.dys) << ',' << fmt(st.dyr) << "\n";
  }
}

ParseTree extract_parse_tree(const ForwardTrace& trace) {
  ParseTree tree;
  for (const Tensor& caps : trace.layer_caps) {
    Tensor norms({caps.dim(0)});
    for (long i = 0; i < caps.dim(0); ++i) norms[i] = capsule_norm(caps, i);
    tree.norms.push_back(std::move(norms));
  }
  tree.couplings = trace.couplings;
  return tree;
}

void write_parse_tree_json(const ParseTree& tree, const std::string& path) {
  json j;
  j["layers"] = json::array();
  for (const Tensor& n : tree.norms) j["layers"].push_back({{"norms", n.data}});
  j["couplings"] = json::array();
  for (const Tensor& c : tree.couplings) j["couplings"].push_back(tensor_to_json(c));
  open_out(path, "write_parse_tree_json") << j.dump(2) << "\n";
}

DatasetParseStats dataset_parse_stats(const DatasetTrace& trace, double tau_dead) {
  long S = trace.samples();
  if (S == 0) throw std::runtime_error("dataset_parse_stats: empty trace");
  DatasetParseStats out;

  for (const Tensor& norms : trace.norms) {
    long n = norms.dim(1);
    Tensor mean({n}), sd({n});
    for (long i = 0; i < n; ++i) {
      double m = 0;
      for (long s = 0; s < S; ++s) m += norms.at(s, i);
      m /= (double)S;
      double var = 0;
      for (long s = 0; s < S; ++s) {
        double d = norms.at(s, i) - m;
        var += d * d;
      }
      mean[i] = m;
      sd[i] = std::sqrt(var / (double)S);
    }
    std::vector<char> dead((size_t)n, 1);
    for (long i = 0; i < n; ++i)
      for (long s = 0; s < S; ++s)
        if (norms.at(s, i) >= tau_dead) {
          dead[(size_t)i] = 0;
          break;
        }
    out.norm_mean.push_back(std::move(mean));
    out.norm_std.push_back(std::move(sd));
    out.dead.push_back(std::move(dead));
  }

  for (const std::vector<Tensor>& mats : trace.couplings) {
    Tensor mean(mats[0].shape), sd(mats[0].shape);
    for (const Tensor& m : mats)
      for (long i = 0; i < mean.numel(); ++i) mean[i] += m[i];
    for (long i = 0; i < mean.numel(); ++i) mean[i] /= (double)S;
    for (const Tensor& m : mats)
      for (long i = 0; i < mean.numel(); ++i) {
        double d = m[i] - mean[i];
        sd[i] += d * d;
      }
    for (long i = 0; i < mean.numel(); ++i) sd[i] = std::sqrt(sd[i] / (double)S);
    out.coupling_mean.push_back(std::move(mean));
    out.coupling_std.push_back(std::move(sd));
  }
  return out;
}

void write_parse_stats_json(const DatasetParseStats& stats, const std::string& path) {
  json j;
  j["layers"] = json::array();
  for (size_t l = 0; l < stats.norm_mean.size(); ++l) {
    std::vector<int> dead(stats.dead[l].begin(), stats.dead[l].end());
    j["layers"].push_back({{"norm_mean", stats.norm_mean[l].data},
                           {"norm_std", stats.norm_std[l].data},
                           {"dead", dead}});
  }
  j["couplings"] = json::array();
  for (size_t r = 0; r < stats.coupling_mean.size(); ++r) {
    j["couplings"].push_back({{"mean", tensor_to_json(stats.coupling_mean[r])},
                              {"std", tensor_to_json(stats.coupling_std[r])}});
  }
  open_out(path, "write_parse_stats_json") << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// viewpoint sweeps

const char* sweep_kind_name(SweepKind k) {
  switch (k) {
    case SweepKind::rotation: return "rotation";
    case SweepKind::shear: return "shear";
    case SweepKind::scale: return "scale";
    case SweepKind::translate_x: return "translate-x";
    case SweepKind::translate_y: return "translate-y";
  }
  return "?";
}

SweepKind sweep_kind_from_name(const std::string& name) {
  for (SweepKind k : {SweepKind::rotation, SweepKind::shear, SweepKind::scale,
                      SweepKind::translate_x, SweepKind::translate_y}) {
    if (name == sweep_kind_name(k)) return k;
  }
  throw std::runtime_error("unknown sweep kind '" + name +
                           "' (rotation|shear|scale|translate-x|translate-y)");
}

double pearson(const std::vector<double>& x, const std::vector<double>& y, bool* defined) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::runtime_error("pearson: need two equal-length vectors of size >= 2");
  }
  auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double e) { return e == v[0]; });
  };
  // zero variance first: even bitwise-equal constant vectors are undefined
  if (constant(x) || constant(y)) {
    if (defined != nullptr) *defined = false;
    return 0.0;
  }
  if (defined != nullptr) *defined = true;
  if (x == y) return 1.0;  // exact by definition, avoids sqrt rounding
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / (double)x.size();
  double my = std::accumulate(y.begin(), y.end(), 0.0) / (double)y.size();
  double sxx = 0, syy = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    if (defined != nullptr) *defined = false;
    return 0.0;
  }
  return sxy / std::sqrt(sxx * syy);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    size_t i = 0;
    while (i < order.size()) {
      size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      double avg = ((double)i + (double)j) / 2.0 + 1.0;  // average rank for ties
      for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  bool defined = false;
  double rho = pearson(ranks(x), ranks(y), &defined);
  return defined ? rho : 0.0;
}

namespace {

AffineParams sweep_params(SweepKind kind, double magnitude) {
  AffineParams p;
  switch (kind) {
    case SweepKind::rotation: p.rotation_deg = magnitude; break;
    case SweepKind::shear: p.shear_deg = magnitude; break;
    case SweepKind::scale: p.scale = 1.0 + magnitude; break;
    case SweepKind::translate_x: p.dx = magnitude; break;
    case SweepKind::translate_y: p.dy = magnitude; break;
  }
  return p;
}

std::vector<double> selected_norms(const ArchitectureSpec& arch, const ModelParams& params,
                                   const Tensor& image, bool primecaps_only) {
  Tape tape;
  tape.recording = false;
  ForwardTrace tr = forward(tape, arch, params, nullptr, image, -1, false);
  size_t last = tr.layer_caps.size() - 1;
  std::vector<double> out;
  for (size_t l = 0; l < tr.layer_caps.size(); ++l) {
    if (primecaps_only && l != 0) continue;
    if (!primecaps_only && l == last) continue;
    const Tensor& caps = tr.layer_caps[l];
    for (long i = 0; i < caps.dim(0); ++i) out.push_back(capsule_norm(caps, i));
  }
  return out;
}

}  // namespace

std::vector<SweepPoint> viewpoint_sweep(const ArchitectureSpec& arch, const ModelParams& params,
                                        const std::vector<Tensor>& images, SweepKind kind,
                                        const std::vector<double>& magnitudes,
                                        bool primecaps_only) {
  if (magnitudes.size() < 2) {
    throw std::runtime_error("viewpoint_sweep: need at least 2 magnitudes");
  }
  if (images.empty()) throw std::runtime_error("viewpoint_sweep: empty dataset");

  std::vector<std::vector<double>> base;
  base.reserve(images.size());
  for (const Tensor& img : images) {
    base.push_back(selected_norms(arch, params, img, primecaps_only));
  }

  std::vector<SweepPoint> out;
  for (double m : magnitudes) {
    AffineParams p = sweep_params(kind, m);
    SweepPoint pt;
    pt.magnitude = m;
    std::vector<double> rs;
    for (size_t s = 0; s < images.size(); ++s) {
      Tensor warped = random_affine(images[s], p);
      std::vector<double> norms = selected_norms(arch, params, warped, primecaps_only);
      bool defined = false;
      double r = pearson(base[s], norms, &defined);
      if (defined) {
        rs.push_back(r);
      } else {
        ++pt.undefined;
      }
    }
    pt.valid = (long)rs.size();
    if (!rs.empty()) {
      double mean = std::accumulate(rs.begin(), rs.end(), 0.0) / (double)rs.size();
      double var = 0;
      for (double r : rs) var += (r - mean) * (r - mean);
      pt.mean_correlation = mean;
      pt.std_correlation = std::sqrt(var / (double)rs.size());
    }
    out.push_back(std::move(pt));
  }
  return out;
}

void write_sweep_csv(SweepKind kind, const std::vector<SweepPoint>& points,
                     const std::string& path) {
  std::ofstream out = open_out(path, "write_sweep_csv");
  out << "kind,magnitude,mean_correlation,std_correlation,valid,undefined\n";
  for (const SweepPoint& p : points) {
    out << sweep_kind_name(kind) << ',' << fmt(p.magnitude) << ',' << fmt(p.mean_correlation)
        << ',' << fmt(p.std_correlation) << ',' << p.valid << ',' << p.undefined << "\n";
  }
}

// ---------------------------------------------------------------------------
// gradient-identity harnesses

Theorem1Report verify_theorem1(const ArchitectureSpec& arch, const ModelParams& params,
                               const std::vector<Tensor>& images,
                               const std::vector<int>& targets) {
  if (images.empty() || images.size() != targets.size()) {
    throw std::runtime_error("verify_theorem1: empty or mismatched batch");
  }
  Theorem1Report rep;
  LossConfig cfg;
  for (size_t s = 0; s < images.size(); ++s) {
    ModelParams grads = zeros_like(params);
    Tape tape;
    ForwardTrace tr = forward(tape, arch, params, &grads, images[s], -1, false);
    tape.backward(margin_loss_graph(tr.out_caps, targets[s], cfg));
    const Tensor* g = tape.grad(tr.out_caps.id);
    if (g == nullptr) throw std::runtime_error("verify_theorem1: no gradient at output capsules");

    const Tensor& u = tr.output_caps();
    for (long j = 0; j < u.dim(0); ++j) {
      Tensor row({u.dim(1)});
      for (long e = 0; e < u.dim(1); ++e) row[e] = u.at(j, e);
      if (row.l2_norm() <= 1e-6) {
        ++rep.skipped_singular;
        continue;
      }
      bool singular = false;
      Tensor want =
          margin_loss_grad_closed_form(row, j == targets[s] ? 1 : 0, cfg, &singular);
      double scale = std::max(want.max_abs(), 1e-12);
      for (long e = 0; e < u.dim(1); ++e) {
        double err = std::fabs(g->at(j, e) - want[e]) / scale;
        rep.max_rel_err = std::max(rep.max_rel_err, err);
      }
      ++rep.checked;
    }
  }
  rep.pass = rep.checked > 0 && rep.max_rel_err < 1e-8;
  return rep;
}

Theorem2Report verify_theorem2(long n_l, long n_u, long d_l, long d_u, int r,
                               std::uint64_t seed) {
  Rng rng(seed);
  Tensor U0({n_l, d_l}), W0({n_u, n_l, d_u, d_l}), priors({n_l, n_u});
  for (long i = 0; i < U0.numel(); ++i) U0[i] = rng.uniform(-1, 1);
  for (long i = 0; i < W0.numel(); ++i) W0[i] = rng.normal(0.0, 1.0 / std::sqrt((double)d_l));
  for (long i = 0; i < priors.numel(); ++i) priors[i] = rng.uniform(-0.5, 0.5);
  LossConfig cfg;

  Theorem2Report rep;

  auto run = [&](const Tensor& U_in, const Tensor& W_in) {
    struct Out {
      Tensor gU, gW, gV;
    };
    Tape tape;
    Var U = tape.input(U_in);
    Var W = tape.input(W_in);
    CapsuleLayerOut layer = capsule_layer_forward(U, W, tape.leaf(priors), r, RoutingMode::rba,
                                                  /*detach_couplings=*/true);
    tape.backward(margin_loss_graph(layer.caps, 0, cfg));
    const Tensor* gV = tape.grad(layer.votes.id);
    if (gV == nullptr) throw std::runtime_error("verify_theorem2: no gradient at votes");
    return Out{*tape.grad(U.id), *tape.grad(W.id), *gV};
  };

  auto rel = [](double diff, double scale) { return diff / std::max(scale, 1e-12); };

  // identities on the random layer
  {
    auto got = run(U0, W0);
    // input identity: dL/du_i[e] = sum_j sum_f gV[i,j,f] * W[j,i,f,e]
    double scale_u = std::max(got.gU.max_abs(), 1e-12);
    for (long i = 0; i < n_l; ++i) {
      for (long e = 0; e < d_l; ++e) {
        double want = 0;
        for (long j = 0; j < n_u; ++j)
          for (long f = 0; f < d_u; ++f) want += got.gV.at(i, j, f) * W0.at(j, i, f, e);
        rep.input_identity_err =
            std::max(rep.input_identity_err, rel(std::fabs(got.gU.at(i, e) - want), scale_u));
      }
    }
    // weight identity: dL/dW[j,i,f,e] = gV[i,j,f] * u_i[e]
    double scale_w = std::max(got.gW.max_abs(), 1e-12);
    for (long j = 0; j < n_u; ++j)
      for (long i = 0; i < n_l; ++i)
        for (long f = 0; f < d_u; ++f)
          for (long e = 0; e < d_l; ++e) {
            double want = got.gV.at(i, j, f) * U0.at(i, e);
            rep.weight_identity_err = std::max(
                rep.weight_identity_err, rel(std::fabs(got.gW.at(j, i, f, e) - want), scale_w));
          }
  }

  // zero input row k => its weight gradients vanish exactly
  {
    long k = n_l / 2;
    Tensor Uz = U0;
    for (long e = 0; e < d_l; ++e) Uz.at(k, e) = 0.0;
    auto got = run(Uz, W0);
    for (long j = 0; j < n_u; ++j)
      for (long f = 0; f < d_u; ++f)
        for (long e = 0; e < d_l; ++e) {
          rep.zero_activation_resid =
              std::max(rep.zero_activation_resid, std::fabs(got.gW.at(j, k, f, e)));
        }
  }

  // zero weight blocks toward capsule k => its input gradient vanishes exactly
  {
    long k = n_l / 2;
    Tensor Wz = W0;
    for (long j = 0; j < n_u; ++j)
      for (long f = 0; f < d_u; ++f)
        for (long e = 0; e < d_l; ++e) Wz.at(j, k, f, e) = 0.0;
    auto got = run(U0, Wz);
    for (long e = 0; e < d_l; ++e) {
      rep.zero_weight_resid = std::max(rep.zero_weight_resid, std::fabs(got.gU.at(k, e)));
    }
  }

  // scaling law under a fixed upstream gradient: a loss linear in the votes
  // pins dL/dvote to a constant, so doubling u_k must double dL/dW_jk exactly
  {
    long k = n_l / 2;
    Tensor G({n_l, n_u, d_u});
    for (long i = 0; i < G.numel(); ++i) G[i] = rng.uniform(-1, 1);
    auto grad_w = [&](const Tensor& U_in) {
      Tape tape;
      Var U = tape.input(U_in);
      Var W = tape.input(W0);
      Var votes = compute_votes(U, W);
      tape.backward(weighted_sum(votes, G));
      return *tape.grad(W.id);
    };
    Tensor g1 = grad_w(U0);
    Tensor U2 = U0;
    for (long e = 0; e < d_l; ++e) U2.at(k, e) *= 2.0;
    Tensor g2 = grad_w(U2);
    for (long j = 0; j < n_u; ++j)
      for (long f = 0; f < d_u; ++f)
        for (long e = 0; e < d_l; ++e) {
          rep.scaling_resid = std::max(
              rep.scaling_resid, std::fabs(g2.at(j, k, f, e) - 2.0 * g1.at(j, k, f, e)));
        }
  }

  rep.pass = rep.input_identity_err < 1e-8 && rep.weight_identity_err < 1e-8 &&
             rep.zero_activation_resid == 0.0 && rep.zero_weight_resid == 0.0 &&
             rep.scaling_resid == 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// starvation tracking

bool StarvationTimeline::all_persistent() const {
  return std::all_of(deaths.begin(), deaths.end(),
                     [](const CapsuleDeath& d) { return d.persistent; });
}

long StarvationTimeline::deaths_in_layer(long layer) const {
  return std::count_if(deaths.begin(), deaths.end(),
                       [&](const CapsuleDeath& d) { return d.layer == layer; });
}

StarvationTracker::StarvationTracker(double tau_dead) : tau_dead_(tau_dead) {
  if (!(tau_dead > 0 && tau_dead < 1)) {
    throw std::runtime_error("StarvationTracker: tau_dead must be in (0,1)");
  }
}

void StarvationTracker::observe(long step, const std::vector<Tensor>& max_norms) {
  if (death_step_.empty()) {
    for (const Tensor& t : max_norms) {
      death_step_.emplace_back((size_t)t.numel(), -1);
      revived_.emplace_back((size_t)t.numel(), 0);
    }
  }
  if (max_norms.size() != death_step_.size()) {
    throw std::runtime_error("StarvationTracker: layer count changed between steps");
  }
  ++steps_;
  for (size_t l = 0; l < max_norms.size(); ++l) {
    const Tensor& t = max_norms[l];
    for (long i = 0; i < t.numel(); ++i) {
      bool below = t[i] < tau_dead_;
      long& death = death_step_[l][(size_t)i];
      if (below && death < 0) {
        death = step;
      } else if (!below && death >= 0) {
        revived_[l][(size_t)i] = 1;
      }
    }
  }
}

StarvationTimeline StarvationTracker::timeline() const {
  StarvationTimeline tl;
  tl.steps_observed = steps_;
  for (size_t l = 0; l < death_step_.size(); ++l) {
    for (size_t i = 0; i < death_step_[l].size(); ++i) {
      if (death_step_[l][i] >= 0) {
        tl.deaths.push_back(
            {(long)l, (long)i, death_step_[l][i], revived_[l][i] == 0});
      }
    }
  }
  return tl;
}

void write_starvation_csv(const StarvationTimeline& timeline, const std::string& path) {
  std::ofstream out = open_out(path, "write_starvation_csv");
  out << "layer,capsule,death_step,persistent\n";
  for (const CapsuleDeath& d : timeline.deaths) {
    out << d.layer << ',' << d.capsule << ',' << d.step << ',' << (d.persistent ? 1 : 0) << "\n";
  }
}

}  // namespace caps
