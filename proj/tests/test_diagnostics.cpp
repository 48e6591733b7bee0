#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "capslab/diagnostics.hpp"
#include "capslab/objective.hpp"
#include "capslab/training.hpp"

using namespace caps;

namespace {

Tensor random_image(const ArchitectureSpec& spec, Rng& rng) {
  Tensor img({(long)spec.in_ch, (long)spec.in_h, (long)spec.in_w});
  for (long i = 0; i < img.numel(); ++i) img[i] = rng.uniform(0.0, 1.0);
  return img;
}

double capsule_norm(const Tensor& caps, long row) {
  double s = 0;
  for (long e = 0; e < caps.dim(1); ++e) s += caps.at(row, e) * caps.at(row, e);
  return std::sqrt(s);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

long count_lines(const std::string& text) {
  long n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

// 2 samples x 2 capsules, second capsule silent: the pinned statistics fixture
DatasetTrace two_capsule_trace() {
  DatasetTrace trace;
  Tensor norms({2, 2});
  norms.at(0, 0) = 0.9;
  norms.at(0, 1) = 0.0;
  norms.at(1, 0) = 0.8;
  norms.at(1, 1) = 0.0;
  trace.norms.push_back(norms);
  return trace;
}

}  // namespace

TEST_CASE("layer statistics on the hand fixture") {
  std::vector<LayerStats> stats = layer_statistics(two_capsule_trace(), 0.1, 0.05);
  REQUIRE(stats.size() == 1);
  const LayerStats& st = stats[0];
  CHECK(st.n == 2);
  CHECK(st.cnm == doctest::Approx(0.425).epsilon(1e-12));
  CHECK(st.cns == doctest::Approx(0.85).epsilon(1e-12));
  CHECK(st.cas == 1.0);  // one active capsule in every sample
  CHECK(st.car == 0.5);
  CHECK(st.cds == 1);
  CHECK(st.cdr == 0.5);
  REQUIRE(st.dead.size() == 2);
  CHECK(st.dead[0] == 0);
  CHECK(st.dead[1] == 1);
}

TEST_CASE("layer statistics validates thresholds and rejects empty traces") {
  CHECK_THROWS_AS(layer_statistics(DatasetTrace{}, 0.1, 0.05), std::runtime_error);
  CHECK_THROWS_AS(layer_statistics(two_capsule_trace(), 0.0, 0.05), std::runtime_error);
  CHECK_THROWS_AS(layer_statistics(two_capsule_trace(), 0.1, 1.5), std::runtime_error);
}

TEST_CASE("layer statistic ratios satisfy their identities on random traces") {
  Rng rng(404);
  DatasetTrace trace;
  trace.norms.emplace_back(shape_t{7, 5});
  trace.norms.emplace_back(shape_t{7, 3});
  for (Tensor& t : trace.norms)
    for (long i = 0; i < t.numel(); ++i) t[i] = rng.uniform(0.0, 1.0);

  for (const LayerStats& st : layer_statistics(trace, 0.1, 0.05)) {
    CHECK(st.cns == doctest::Approx((double)st.n * st.cnm).epsilon(1e-9));
    CHECK(st.car == doctest::Approx(st.cas / (double)st.n).epsilon(1e-9));
    CHECK(st.cdr == doctest::Approx((double)st.cds / (double)st.n).epsilon(1e-9));
  }
}

TEST_CASE("active ratio of 48 out of 64 capsules is exactly 0.75") {
  DatasetTrace trace;
  Tensor norms({1, 64});
  for (long i = 0; i < 64; ++i) norms.at(0, i) = i < 48 ? 0.5 : 0.01;
  trace.norms.push_back(norms);
  std::vector<LayerStats> stats = layer_statistics(trace, 0.1, 0.05);
  CHECK(stats[0].cas == 48.0);
  CHECK(stats[0].car == 0.75);
}

TEST_CASE("routing dynamics on the alternating-rows fixture") {
  // one lower capsule whose coupling row flips between (1,0) and (0,1)
  DatasetTrace trace;
  Tensor lower({2, 1}), upper({2, 2});
  lower.at(0, 0) = lower.at(1, 0) = 0.5;
  upper.at(0, 0) = upper.at(0, 1) = upper.at(1, 0) = upper.at(1, 1) = 0.5;
  trace.norms = {lower, upper};
  Tensor c0({1, 2}), c1({1, 2});
  c0.at(0, 0) = 1.0;
  c1.at(0, 1) = 1.0;
  trace.couplings = {{c0, c1}};

  std::vector<DynamicsStats> stats = routing_dynamics(trace, 0.05);
  REQUIRE(stats.size() == 1);
  CHECK(stats[0].alive_from_lower == 1);
  CHECK(stats[0].alive_to_higher == 2);
  REQUIRE(stats[0].dynamics.size() == 1);
  CHECK(stats[0].dynamics[0] == 1.0);
  CHECK(stats[0].dys == 1.0);
  CHECK(stats[0].dyr == 0.5);
}

TEST_CASE("input-independent couplings have zero dynamics") {
  DatasetTrace trace;
  Tensor lower({3, 2}), upper({3, 2});
  for (long i = 0; i < lower.numel(); ++i) lower[i] = upper[i] = 0.4;
  trace.norms = {lower, upper};
  Tensor c({2, 2});
  c.at(0, 0) = c.at(0, 1) = c.at(1, 0) = c.at(1, 1) = 0.5;
  trace.couplings = {{c, c, c}};
  CHECK(routing_dynamics(trace, 0.05)[0].dys == 0.0);
}

TEST_CASE("a single-sample dataset has zero dynamics") {
  DatasetTrace trace;
  Tensor lower({1, 2}), upper({1, 2});
  lower.at(0, 0) = lower.at(0, 1) = upper.at(0, 0) = upper.at(0, 1) = 0.4;
  trace.norms = {lower, upper};
  Tensor c({2, 2});
  c.at(0, 0) = 0.9;
  c.at(0, 1) = 0.1;
  c.at(1, 0) = 0.2;
  c.at(1, 1) = 0.8;
  trace.couplings = {{c}};
  CHECK(routing_dynamics(trace, 0.05)[0].dys == 0.0);
}

TEST_CASE("dead capsules are excluded from dynamics on both sides") {
  // lower capsule 1 is dead: its wildly varying rows must not count
  DatasetTrace trace;
  Tensor lower({2, 2}), upper({2, 2});
  lower.at(0, 0) = lower.at(1, 0) = 0.5;
  lower.at(0, 1) = lower.at(1, 1) = 0.01;
  upper.at(0, 0) = upper.at(1, 0) = 0.5;  // upper capsule 1 dead as well
  upper.at(0, 1) = upper.at(1, 1) = 0.01;
  trace.norms = {lower, upper};
  Tensor c0({2, 2}), c1({2, 2});
  c0.at(0, 0) = 1.0;
  c1.at(0, 1) = 1.0;  // alive capsule: dynamics 1.0
  c0.at(1, 0) = 1.0;
  c1.at(1, 1) = 1.0;  // dead capsule: would be 1.0 if counted
  trace.couplings = {{c0, c1}};

  std::vector<DynamicsStats> stats = routing_dynamics(trace, 0.05);
  CHECK(stats[0].alive_from_lower == 1);
  CHECK(stats[0].alive_to_higher == 1);
  CHECK(stats[0].dynamics[0] == 1.0);
  CHECK(stats[0].dynamics[1] == 0.0);
  CHECK(stats[0].dys == 1.0);
  CHECK(stats[0].dyr == 1.0);  // normalized by the single alive upper capsule
}

TEST_CASE("dynamics ratio reproduces sum 3.05 over 10 alive upper capsules") {
  DatasetTrace trace;
  Tensor lower({2, 1}), upper({2, 10});
  lower.at(0, 0) = lower.at(1, 0) = 0.5;
  for (long i = 0; i < upper.numel(); ++i) upper[i] = 0.5;
  trace.norms = {lower, upper};
  Tensor c0({1, 10}), c1({1, 10});
  c0.at(0, 0) = 3.05;  // synthetic rows; the metric itself is row-agnostic
  c1.at(0, 1) = 3.05;
  trace.couplings = {{c0, c1}};

  std::vector<DynamicsStats> stats = routing_dynamics(trace, 0.05);
  CHECK(stats[0].dys == doctest::Approx(3.05).epsilon(1e-12));
  CHECK(stats[0].alive_to_higher == 10);
  CHECK(stats[0].dyr == doctest::Approx(0.305).epsilon(1e-9));
  CHECK(stats[0].dyr == stats[0].dys / 10.0);
}

TEST_CASE("collect_trace stores per-sample norms and couplings of the real network") {
  ArchitectureSpec spec = ArchitectureSpec::preset(BackboneKind::tiny);
  Rng rng(21);
  ModelParams params = init_params(spec, rng);
  std::vector<Tensor> images;
  for (int s = 0; s < 3; ++s) images.push_back(random_image(spec, rng));

  DatasetTrace trace = collect_trace(spec, params, images);
  REQUIRE(trace.norms.size() == 3);
  CHECK(trace.norms[0].shape == shape_t{3, 4});
  CHECK(trace.norms[1].shape == shape_t{3, 4});
  CHECK(trace.norms[2].shape == shape_t{3, 2});
  REQUIRE(trace.couplings.size() == 2);
  REQUIRE(trace.couplings[0].size() == 3);
  CHECK(trace.couplings[0][0].shape == shape_t{4, 4});
  CHECK(trace.couplings[1][2].shape == shape_t{4, 2});
  CHECK(trace.samples() == 3);

  // entries must agree bitwise with an independent forward pass
  Tape tape;
  tape.recording = false;
  ForwardTrace tr = forward(tape, spec, params, nullptr, images[1], -1, false);
  for (size_t l = 0; l < tr.layer_caps.size(); ++l) {
    for (long i = 0; i < tr.layer_caps[l].dim(0); ++i) {
      CHECK(trace.norms[l].at(1, i) == capsule_norm(tr.layer_caps[l], i));
    }
  }
  CHECK(trace.couplings[0][1].data == tr.couplings[0].data);

  CHECK_THROWS_AS(collect_trace(spec, params, {}), std::runtime_error);
}

TEST_CASE("layer statistics of a real trace satisfy the ratio identities") {
  ArchitectureSpec spec = ArchitectureSpec::preset(BackboneKind::tiny);
  Rng rng(22);
  ModelParams params = init_params(spec, rng);
  std::vector<Tensor> images;
  for (int s = 0; s < 4; ++s) images.push_back(random_image(spec, rng));
  DatasetTrace trace = collect_trace(spec, params, images);

  for (const LayerStats& st : layer_statistics(trace, 0.1, 0.05)) {
    CHECK(st.cns == doctest::Approx((double)st.n * st.cnm).epsilon(1e-9));
    CHECK(st.car == doctest::Approx(st.cas / (double)st.n).epsilon(1e-9));
  }
  for (const DynamicsStats& st : routing_dynamics(trace, 0.05)) {
    if (st.alive_to_higher > 0) CHECK(st.dyr == st.dys / (double)st.alive_to_higher);
  }
}

TEST_CASE("parse tree extraction mirrors the forward trace") {
  ArchitectureSpec spec = ArchitectureSpec::preset(BackboneKind::tiny);
  Rng rng(23);
  ModelParams params = init_params(spec, rng);
  Tape tape;
  tape.recording = false;
  ForwardTrace tr = forward(tape, spec, params, nullptr, random_image(spec, rng), -1, false);

  ParseTree tree = extract_parse_tree(tr);
  REQUIRE(tree.norms.size() == 3);
  CHECK(tree.norms[0].shape == shape_t{4});
  CHECK(tree.norms[2].shape == shape_t{2});
  REQUIRE(tree.couplings.size() == 2);
  CHECK(tree.couplings[0].shape == shape_t{4, 4});
  CHECK(tree.couplings[1].shape == shape_t{4, 2});
  for (long i = 0; i < 4; ++i) CHECK(tree.norms[1][i] == capsule_norm(tr.layer_caps[1], i));
  for (long i = 0; i < 4; ++i) {
    double row = 0;
    for (long j = 0; j < 2; ++j) row += tree.couplings[1].at(i, j);
    CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("a single-routing-layer trace yields one coupling matrix and two norm vectors") {
  ArchitectureSpec spec = ArchitectureSpec::preset(BackboneKind::tiny);
  spec.routing_layers = 1;
  Rng rng(24);
  ModelParams params = init_params(spec, rng);
  Tape tape;
  tape.recording = false;
  ForwardTrace tr = forward(tape, spec, params, nullptr, random_image(spec, rng), -1, false);
  ParseTree tree = extract_parse_tree(tr);
  CHECK(tree.norms.size() == 2);
  CHECK(tree.couplings.size() == 1);
}

TEST_CASE("uniform routing makes the dataset coupling std exactly zero") {
  ArchitectureSpec spec = ArchitectureSpec::preset(BackboneKind::tiny);
  spec.routing = RoutingMode::uniform;
  Rng rng(25);
  ModelParams params = init_params(spec, rng);
  std::vector<Tensor> images;
  for (int s = 0; s < 3; ++s) images.push_back(random_image(spec, rng));

  DatasetTrace trace = collect_trace(spec, params, images);
  DatasetParseStats stats = dataset_parse_stats(trace, 0.05);
  REQUIRE(stats.coupling_std.size() == 2);
  for (const Tensor& sd : stats.coupling_std)
    for (long i = 0; i < sd.numel(); ++i) CHECK(sd[i] == 0.0);
  CHECK(stats.coupling_mean[0].at(0, 0) == 0.25);  // 1/n_u
  CHECK(stats.coupling_mean[1].at(0, 0) == 0.5);

  // uniform couplings are also input-independent: zero routing dynamics
  for (const DynamicsStats& st : routing_dynamics(trace, 0.05)) CHECK(st.dys == 0.0);
}

TEST_CASE("dataset parse statistics match a hand computation") {
  DatasetTrace trace;
  Tensor norms({2, 2});
  norms.at(0, 0) = 0.2;
  norms.at(1, 0) = 0.6;
  norms.at(0, 1) = 0.01;
  norms.at(1, 1) = 0.02;
  trace.norms.push_back(norms);

  DatasetParseStats stats = dataset_parse_stats(trace, 0.05);
  CHECK(stats.norm_mean[0][0] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(stats.norm_std[0][0] == doctest::Approx(0.2).epsilon(1e-12));  // population std
  CHECK(stats.dead[0][0] == 0);
  CHECK(stats.dead[0][1] == 1);
}

TEST_CASE("statistics writers emit one row per layer plus a header") {
  ArchitectureSpec spec = ArchitectureSpec::preset(BackboneKind::tiny);
  Rng rng(26);
  ModelParams params = init_params(spec, rng);
  std::vector<Tensor> images;
  for (int s = 0; s < 2; ++s) images.push_back(random_image(spec, rng));
  DatasetTrace trace = collect_trace(spec, params, images);

  write_layer_stats_csv(layer_statistics(trace, 0.1, 0.05), "diag_layers.tmp");
  std::string layers = slurp("diag_layers.tmp");
  CHECK(layers.rfind("layer,capsules,cnm,cns,car,cas,cdr,cds\n", 0) == 0);
  CHECK(count_lines(layers) == 4);  // header + 3 layers

  write_dynamics_csv(routing_dynamics(trace, 0.05), "diag_dyn.tmp");
  std::string dyn = slurp("diag_dyn.tmp");
  CHECK(dyn.rfind("routing_layer,", 0) == 0);
  CHECK(count_lines(dyn) == 3);  // header + 2 routing layers

  Tape tape;
  tape.recording = false;
  ForwardTrace tr = forward(tape, spec, params, nullptr, images[0], -1, false);
  write_parse_tree_json(extract_parse_tree(tr), "diag_tree.tmp");
  nlohmann::json tree = nlohmann::json::parse(slurp("diag_tree.tmp"));
  CHECK(tree["layers"].size() == 3);
  CHECK(tree["couplings"].size() == 2);
  CHECK(tree["couplings"][0]["shape"] == nlohmann::json({4, 4}));

  write_parse_stats_json(dataset_parse_stats(trace, 0.05), "diag_stats.tmp");
  nlohmann::json stats = nlohmann::json::parse(slurp("diag_stats.tmp"));
  CHECK(stats["layers"].size() == 3);
  CHECK(stats["layers"][0]["norm_mean"].size() == 4);
  CHECK(stats["couplings"].size() == 2);

  for (const char* f : {"diag_layers.tmp", "diag_dyn.tmp", "diag_tree.tmp", "diag_stats.tmp"})
    std::remove(f);
}

TEST_CASE("pearson correlation handles exact, linear, and degenerate inputs") {
  std::vector<double> x{0.1, 0.7, 0.3, 0.9};
  std::vector<double> lin, neg;
  for (double v : x) {
    lin.push_back(2.0 * v + 1.0);
    neg.push_back(-3.0 * v + 0.5);
  }
  bool defined = false;
  CHECK(pearson(x, x, &defined) == 1.0);  // bitwise equality shortcut
  CHECK(defined);
  CHECK(pearson(x, lin, &defined) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pearson(x, neg, &defined) == doctest::Approx(-1.0).epsilon(1e-12));

  std::vector<double> flat{0.5, 0.5, 0.5, 0.5};
  pearson(x, flat, &defined);
  CHECK_FALSE(defined);
  pearson(flat, flat, &defined);  // constant-vs-itself is undefined, not 1
  CHECK_FALSE(defined);

  CHECK_THROWS_AS(pearson({1.0}, {1.0}, nullptr), std::runtime_error);
  CHECK_THROWS_AS(pearson({1.0, 2.0}, {1.0}, nullptr), std::runtime_error);
}

TEST_CASE("spearman correlation ranks monotone data and averages ties") {
  std::vector<double> x{0.3, 1.2, 0.7, 2.5};
  std::vector<double> cube;
  for (double v : x) cube.push_back(v * v * v);
  CHECK(spearman(x, cube) == 1.0);  // identical ranks, exact by the shortcut
  std::vector<double> inv;
  for (double v : x) inv.push_back(-v);
  CHECK(spearman(x, inv) == doctest::Approx(-1.0).epsilon(1e-12));

  // classic hand value: one swapped middle pair gives 1 - 6*2/(4*15) = 0.8
  CHECK(spearman({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(0.8).epsilon(1e-12));

  // ties with identical structure on both sides still correlate perfectly
  CHECK(spearman({1, 1, 2}, {5, 5, 9}) == 1.0);
}

TEST_CASE("viewpoint sweep reports correlation exactly 1 at magnitude zero") {
  ArchitectureSpec spec = ArchitectureSpec::preset(BackboneKind::tiny);
  Rng rng(27);
  ModelParams params = init_params(spec, rng);
  std::vector<Tensor> images;
  for (int s = 0; s < 3; ++s) images.push_back(random_image(spec, rng));

  for (SweepKind kind : {SweepKind::rotation, SweepKind::shear, SweepKind::scale,
                         SweepKind::translate_x, SweepKind::translate_y}) {
    std::vector<SweepPoint> pts = viewpoint_sweep(spec, params, images, kind, {0.0, 2.0 * 0.05});
    REQUIRE(pts.size() == 2);
    CHECK(pts[0].magnitude == 0.0);
    CHECK(pts[0].mean_correlation == 1.0);
    CHECK(pts[0].std_correlation == 0.0);
    CHECK(pts[0].valid == 3);
    CHECK(pts[0].undefined == 0);
    CHECK(pts[1].valid + pts[1].undefined == 3);
  }

  CHECK_THROWS_AS(viewpoint_sweep(spec, params, images, SweepKind::rotation, {0.0}),
                  std::runtime_error);
  CHECK_THROWS_AS(viewpoint_sweep(spec, params, {}, SweepKind::rotation, {0.0, 5.0}),
                  std::runtime_error);
}

TEST_CASE("a degenerate model with constant norms yields undefined correlations") {
  ArchitectureSpec spec = ArchitectureSpec::preset(BackboneKind::tiny);
  Rng rng(28);
  ModelParams params = zeros_like(init_params(spec, rng));  // all-zero network
  std::vector<Tensor> images;
  for (int s = 0; s < 3; ++s) images.push_back(random_image(spec, rng));

  std::vector<SweepPoint> pts =
      viewpoint_sweep(spec, params, images, SweepKind::rotation, {0.0, 10.0});
  for (const SweepPoint& p : pts) {
    CHECK(p.valid == 0);
    CHECK(p.undefined == 3);
    CHECK(p.mean_correlation == 0.0);  // explicit missing value, not NaN
    CHECK(std::isfinite(p.std_correlation));
  }
}

TEST_CASE("sweep kinds round-trip through their names and the CSV writer") {
  for (SweepKind k : {SweepKind::rotation, SweepKind::shear, SweepKind::scale,
                      SweepKind::translate_x, SweepKind::translate_y}) {
    CHECK(sweep_kind_from_name(sweep_kind_name(k)) == k);
  }
  CHECK_THROWS_AS(sweep_kind_from_name("zoom"), std::runtime_error);

  std::vector<SweepPoint> pts(3);
  pts[0].magnitude = 0;
  pts[1].magnitude = 5;
  pts[2].magnitude = 10;
  write_sweep_csv(SweepKind::rotation, pts, "diag_sweep.tmp");
  std::string csv = slurp("diag_sweep.tmp");
  CHECK(csv.rfind("kind,magnitude,", 0) == 0);
  CHECK(count_lines(csv) == 4);
  CHECK(csv.find("rotation,") != std::string::npos);
  std::remove("diag_sweep.tmp");
}

TEST_CASE("output-capsule gradients match the closed form on a random model") {
  ArchitectureSpec spec = ArchitectureSpec::preset(BackboneKind::tiny);
  Rng rng(29);
  ModelParams params = init_params(spec, rng);
  std::vector<Tensor> images;
  std::vector<int> targets;
  for (int s = 0; s < 4; ++s) {
    images.push_back(random_image(spec, rng));
    targets.push_back((int)rng.index(2));
  }

  Theorem1Report rep = verify_theorem1(spec, params, images, targets);
  CHECK(rep.checked > 0);
  CHECK(rep.max_rel_err < 1e-8);
  CHECK(rep.pass);

  CHECK_THROWS_AS(verify_theorem1(spec, params, {}, {}), std::runtime_error);
  CHECK_THROWS_AS(verify_theorem1(spec, params, images, {0}), std::runtime_error);
}

TEST_CASE("the closed-form gradient magnitude does not vanish for faint targets") {
  // for a present class the pull is 2(m+ - |u|), approaching 1.8 as |u| -> 0
  LossConfig cfg;
  Tensor u({2});
  u[0] = 1e-5;
  bool singular = false;
  Tensor g = margin_loss_grad_closed_form(u, 1, cfg, &singular);
  CHECK_FALSE(singular);
  CHECK(g.l2_norm() == doctest::Approx(2.0 * (cfg.m_plus - 1e-5)).epsilon(1e-9));
}

TEST_CASE("vote-gradient identities hold on random routing layers") {
  for (int r : {1, 3}) {
    Theorem2Report rep = verify_theorem2(5, 3, 4, 2, r, 11 + (std::uint64_t)r);
    CHECK(rep.input_identity_err < 1e-8);
    CHECK(rep.weight_identity_err < 1e-8);
    CHECK(rep.zero_activation_resid == 0.0);
    CHECK(rep.zero_weight_resid == 0.0);
    CHECK(rep.scaling_resid == 0.0);
    CHECK(rep.pass);
  }
  CHECK(verify_theorem2(1, 1, 1, 1, 2, 5).pass);  // degenerate single-capsule layer
}

TEST_CASE("starvation tracker records the pinned synthetic death") {
  StarvationTracker tracker(0.05);
  std::vector<double> series{0.5, 0.01, 0.01, 0.01};
  for (size_t i = 0; i < series.size(); ++i) {
    Tensor layer({1});
    layer[0] = series[i];
    tracker.observe((long)i + 1, {layer});
  }
  StarvationTimeline tl = tracker.timeline();
  CHECK(tl.steps_observed == 4);
  REQUIRE(tl.deaths.size() == 1);
  CHECK(tl.deaths[0].layer == 0);
  CHECK(tl.deaths[0].capsule == 0);
  CHECK(tl.deaths[0].step == 2);
  CHECK(tl.deaths[0].persistent);
  CHECK(tl.all_persistent());
  CHECK(tl.deaths_in_layer(0) == 1);
}

TEST_CASE("capsules that never drop below the threshold record no death") {
  StarvationTracker tracker(0.05);
  for (long step = 1; step <= 5; ++step) {
    Tensor layer({2});
    layer[0] = 0.3;
    layer[1] = 0.06;
    tracker.observe(step, {layer});
  }
  CHECK(tracker.timeline().deaths.empty());
  CHECK(tracker.timeline().all_persistent());  // vacuously true
}

TEST_CASE("a revived capsule keeps its first death step but loses persistence") {
  StarvationTracker tracker(0.05);
  std::vector<double> series{0.5, 0.01, 0.5, 0.01};
  for (size_t i = 0; i < series.size(); ++i) {
    Tensor layer({1});
    layer[0] = series[i];
    tracker.observe((long)i + 1, {layer});
  }
  StarvationTimeline tl = tracker.timeline();
  REQUIRE(tl.deaths.size() == 1);
  CHECK(tl.deaths[0].step == 2);
  CHECK_FALSE(tl.deaths[0].persistent);
  CHECK_FALSE(tl.all_persistent());
}

TEST_CASE("starvation tracking separates layers and validates its inputs") {
  CHECK_THROWS_AS(StarvationTracker(0.0), std::runtime_error);
  CHECK_THROWS_AS(StarvationTracker(1.0), std::runtime_error);

  StarvationTracker tracker(0.05);
  Tensor l0({2}), l1({3});
  for (long i = 0; i < 2; ++i) l0[i] = 0.5;
  for (long i = 0; i < 3; ++i) l1[i] = 0.5;
  tracker.observe(1, {l0, l1});
  l1[2] = 0.01;  // kill capsule 2 of layer 1 at step 2
  tracker.observe(2, {l0, l1});
  CHECK_THROWS_AS(tracker.observe(3, {l0}), std::runtime_error);

  StarvationTimeline tl = tracker.timeline();
  CHECK(tl.deaths_in_layer(0) == 0);
  CHECK(tl.deaths_in_layer(1) == 1);
  REQUIRE(tl.deaths.size() == 1);
  CHECK(tl.deaths[0].layer == 1);
  CHECK(tl.deaths[0].capsule == 2);
  CHECK(tl.deaths[0].step == 2);

  write_starvation_csv(tl, "diag_starve.tmp");
  std::string csv = slurp("diag_starve.tmp");
  CHECK(csv.rfind("layer,capsule,death_step,persistent\n", 0) == 0);
  CHECK(count_lines(csv) == 2);
  CHECK(csv.find("1,2,2,1") != std::string::npos);
  std::remove("diag_starve.tmp");
}

TEST_CASE("the tracker plugs into the training step hook") {
  ArchitectureSpec spec = ArchitectureSpec::preset(BackboneKind::tiny);
  Rng rng(31);
  TrainSet set;
  for (int s = 0; s < 10; ++s) {
    set.images.push_back(random_image(spec, rng));
    set.labels.push_back(s % 2);
  }

  StarvationTracker tracker(0.05);
  TrainOptions opt;
  opt.arch = spec;
  opt.cfg.batch_size = 4;
  opt.cfg.max_epochs = 2;
  opt.cfg.seed = 31;
  opt.step_hook = [&](long step, const std::vector<Tensor>& max_norms) {
    tracker.observe(step, max_norms);
  };
  train(set, set, opt);

  StarvationTimeline tl = tracker.timeline();
  CHECK(tl.steps_observed == 6);  // ceil(10/4) steps per epoch, 2 epochs
  for (const CapsuleDeath& d : tl.deaths) {
    CHECK(d.step >= 1);
    CHECK(d.step <= 6);
    CHECK(d.layer < 3);
  }
}
