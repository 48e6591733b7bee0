#include "capslab/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace caps {

using json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::runtime_error("TrainConfig: lr must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) {
    throw std::runtime_error("TrainConfig: lr_decay must be in (0,1], got " +
                             std::to_string(lr_decay));
  }
  if (weight_decay < 0.0) throw std::runtime_error("TrainConfig: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::runtime_error("TrainConfig: betas must be in [0,1)");
  }
  if (!(eps > 0.0)) throw std::runtime_error("TrainConfig: eps must be > 0");
  if (batch_size < 1) throw std::runtime_error("TrainConfig: batch_size must be >= 1");
  if (max_epochs < 0) throw std::runtime_error("TrainConfig: max_epochs must be >= 0");
  if (target_accuracy > 1.0) {
    throw std::runtime_error("TrainConfig: target_accuracy must be <= 1");
  }
  loss.validate();
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr,
               double weight_decay, const TrainConfig& cfg) {
  state.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, (double)state.step);
  double bc2 = 1.0 - std::pow(cfg.beta2, (double)state.step);

  auto pe = params.entries();
  auto ge = grads.entries();
  auto me = state.m.entries();
  auto ve = state.v.entries();
  if (ge.size() != pe.size() || me.size() != pe.size() || ve.size() != pe.size()) {
    throw std::runtime_error("adam_step: parameter/gradient/moment layout mismatch");
  }
  for (size_t t = 0; t < pe.size(); ++t) {
    Tensor& p = *pe[t].second;
    const Tensor& g = *ge[t].second;
    Tensor& m = *me[t].second;
    Tensor& v = *ve[t].second;
    if (g.shape != p.shape) {
      throw std::runtime_error("adam_step: shape mismatch for " + pe[t].first);
    }
    if (!all_finite(g)) {
      throw std::runtime_error("adam_step: non-finite gradient in " + pe[t].first + " at step " +
                               std::to_string(state.step));
    }
    for (long i = 0; i < p.numel(); ++i) {
      double gi = g[i] + weight_decay * p[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

namespace {

json step_to_json(const TrainStepRecord& r) {
  return json{{"step", r.step},
              {"epoch", r.epoch},
              {"loss_margin", r.loss_margin},
              {"loss_recon", r.loss_recon},
              {"lr", r.lr}};
}

json epoch_to_json(const TrainEpochRecord& r) {
  return json{{"epoch", r.epoch},
              {"val_accuracy", r.val_accuracy},
              {"max_caps_norms", r.max_caps_norms},
              {"w_grad_norms", r.w_grad_norms}};
}

}  // namespace

void write_train_log_jsonl(const TrainLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_train_log_jsonl: cannot open " + path);
  size_t e = 0;
  for (const TrainStepRecord& s : log.steps) {
    while (e < log.epochs.size() && log.epochs[e].epoch < s.epoch) {
      out << epoch_to_json(log.epochs[e++]).dump() << "\n";
    }
    out << step_to_json(s).dump() << "\n";
  }
  while (e < log.epochs.size()) out << epoch_to_json(log.epochs[e++]).dump() << "\n";
}

TrainLog read_train_log_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_train_log_jsonl: cannot open " + path);
  TrainLog log;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& ex) {
      throw std::runtime_error("read_train_log_jsonl: bad JSON at line " + std::to_string(lineno) +
                               ": " + ex.what());
    }
    if (j.contains("step")) {
      log.steps.push_back({j.at("step").get<long>(), j.at("epoch").get<long>(),
                           j.at("loss_margin").get<double>(), j.at("loss_recon").get<double>(),
                           j.at("lr").get<double>()});
    } else {
      TrainEpochRecord r;
      r.epoch = j.at("epoch").get<long>();
      r.val_accuracy = j.at("val_accuracy").get<double>();
      r.max_caps_norms = j.at("max_caps_norms").get<std::vector<double>>();
      r.w_grad_norms = j.at("w_grad_norms").get<std::vector<double>>();
      log.epochs.push_back(std::move(r));
    }
  }
  return log;
}

double evaluate_accuracy(const ArchitectureSpec& arch, const ModelParams& params,
                         const std::vector<Tensor>& images, const std::vector<int>& labels) {
  if (images.empty() || images.size() != labels.size()) {
    throw std::runtime_error("evaluate_accuracy: empty or mismatched dataset");
  }
  long correct = 0;
  for (size_t i = 0; i < images.size(); ++i) {
    Tape tape;
    tape.recording = false;
    ForwardTrace tr = forward(tape, arch, params, nullptr, images[i], -1, false);
    if (predict(tr) == labels[i]) ++correct;
  }
  return (double)correct / (double)images.size();
}

TrainResult train(const TrainSet& train_set, const TrainSet& val_set, const TrainOptions& opt) {
  opt.arch.validate();
  opt.cfg.validate();
  long n = (long)train_set.images.size();
  if (n == 0 || train_set.labels.size() != (size_t)n) {
    throw std::runtime_error("train: empty or mismatched training set");
  }
  if (val_set.images.size() != val_set.labels.size()) {
    throw std::runtime_error("train: mismatched validation set");
  }

  Rng root(opt.cfg.seed);
  Rng init_rng = root.fork(0);
  Rng shuffle_root = root.fork(1);
  Rng transform_root = root.fork(2);

  TrainResult res;
  res.params = init_params(opt.arch, init_rng);
  res.adam.m = zeros_like(res.params);
  res.adam.v = zeros_like(res.params);

  std::ofstream jsonl;
  if (!opt.jsonl_path.empty()) {
    jsonl.open(opt.jsonl_path, std::ios::binary);
    if (!jsonl) throw std::runtime_error("train: cannot open log path " + opt.jsonl_path);
  }

  std::vector<long> caps_counts = opt.arch.layer_caps_counts();
  long num_layers = (long)caps_counts.size();
  long step = 0;

  for (int epoch = 0; epoch < opt.cfg.max_epochs; ++epoch) {
    double lr = opt.cfg.lr * std::pow(opt.cfg.lr_decay, (double)epoch);

    std::vector<long> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = shuffle_root.fork((uint64_t)epoch);
    shuffle_rng.shuffle(order);

    std::vector<double> epoch_max_norms((size_t)num_layers, 0.0);
    std::vector<double> epoch_grad_norms(res.params.routing_W.size(), 0.0);
    long steps_this_epoch = 0;

    for (long start = 0; start < n; start += opt.cfg.batch_size) {
      long bs = std::min<long>(opt.cfg.batch_size, n - start);
      ModelParams grads = zeros_like(res.params);
      double margin_sum = 0.0, recon_sum = 0.0;
      std::vector<Tensor> batch_max_norms;
      for (long l = 0; l < num_layers; ++l) batch_max_norms.emplace_back(shape_t{caps_counts[l]});

      for (long b = 0; b < bs; ++b) {
        long idx = order[(size_t)(start + b)];
        Tensor image = train_set.images[(size_t)idx];
        if (opt.transform) {
          Rng srng = transform_root.fork((uint64_t)epoch * (uint64_t)n + (uint64_t)idx);
          image = opt.transform(image, srng);
        }
        Tape tape;
        ForwardTrace tr =
            forward(tape, opt.arch, res.params, &grads, image, train_set.labels[(size_t)idx]);
        Var margin = margin_loss_graph(tr.out_caps, train_set.labels[(size_t)idx], opt.cfg.loss);
        Var recon = reconstruction_loss_graph(tr.recon, image);
        Var loss = total_loss_graph(margin, recon, opt.cfg.loss);
        margin_sum += margin.val()[0];
        recon_sum += recon.val()[0];
        tape.backward(loss);

        for (long l = 0; l < num_layers; ++l) {
          const Tensor& caps = tr.layer_caps[(size_t)l];
          for (long i = 0; i < caps.dim(0); ++i) {
            double s = 0;
            for (long e = 0; e < caps.dim(1); ++e) s += caps.at(i, e) * caps.at(i, e);
            double norm = std::sqrt(s);
            double& slot = batch_max_norms[(size_t)l][i];
            slot = std::max(slot, norm);
            epoch_max_norms[(size_t)l] = std::max(epoch_max_norms[(size_t)l], norm);
          }
        }
      }

      // batch mean: gradients were summed into the sinks, scale once
      for (auto& [name, t] : grads.entries()) {
        for (long i = 0; i < t->numel(); ++i) (*t)[i] /= (double)bs;
      }
      for (size_t l = 0; l < grads.routing_W.size(); ++l) {
        epoch_grad_norms[l] += grads.routing_W[l].l2_norm();
      }

      adam_step(res.params, grads, res.adam, lr, opt.cfg.weight_decay, opt.cfg);
      ++step;
      ++steps_this_epoch;

      TrainStepRecord rec{step, epoch, margin_sum / (double)bs, recon_sum / (double)bs, lr};
      res.log.steps.push_back(rec);
      if (jsonl.is_open()) jsonl << step_to_json(rec).dump() << "\n" << std::flush;
      if (opt.step_hook) opt.step_hook(step, batch_max_norms);
    }

    TrainEpochRecord erec;
    erec.epoch = epoch;
    erec.val_accuracy = val_set.images.empty()
                            ? 0.0
                            : evaluate_accuracy(opt.arch, res.params, val_set.images, val_set.labels);
    erec.max_caps_norms = epoch_max_norms;
    for (double g : epoch_grad_norms) erec.w_grad_norms.push_back(g / (double)steps_this_epoch);
    res.log.epochs.push_back(erec);
    if (jsonl.is_open()) jsonl << epoch_to_json(erec).dump() << "\n" << std::flush;

    res.best_val_accuracy = std::max(res.best_val_accuracy, erec.val_accuracy);
    res.epochs_run = epoch + 1;
    if (!opt.checkpoint_path.empty()) save_checkpoint(res.params, &res.adam, opt.checkpoint_path);
    if (opt.cfg.target_accuracy > 0.0 && erec.val_accuracy >= opt.cfg.target_accuracy) break;
  }
  return res;
}

// ---------------------------------------------------------------------------
// checkpoint container

namespace {

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((char)((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back((char)((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const std::string& s, size_t off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= (uint32_t)(unsigned char)s[off + (size_t)i] << (8 * i);
  return v;
}

uint64_t get_u64(const std::string& s, size_t off) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= (uint64_t)(unsigned char)s[off + (size_t)i] << (8 * i);
  return v;
}

void put_f32_le(std::string& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

float get_f32_le(const std::string& s, size_t off) {
  uint32_t bits = get_u32(s, off);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

constexpr uint32_t kCheckpointVersion = 1;

std::vector<std::pair<std::string, const Tensor*>> checkpoint_entries(const ModelParams& params,
                                                                      const AdamState* state) {
  std::vector<std::pair<std::string, const Tensor*>> out = params.entries();
  if (state != nullptr) {
    for (auto& [name, t] : state->m.entries()) out.emplace_back("adam.m." + name, t);
    for (auto& [name, t] : state->v.entries()) out.emplace_back("adam.v." + name, t);
  }
  return out;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const AdamState* state, const std::string& path) {
  auto entries = checkpoint_entries(params, state);
  json header = json::array();
  uint64_t offset = 0;
  std::vector<std::string> seen;
  for (auto& [name, t] : entries) {
    if (std::find(seen.begin(), seen.end(), name) != seen.end()) {
      throw std::runtime_error("save_checkpoint: duplicate parameter name " + name);
    }
    seen.push_back(name);
    header.push_back({{"name", name}, {"shape", t->shape}, {"offset", offset}});
    offset += (uint64_t)t->numel() * 4;
  }
  if (state != nullptr) {
    header.push_back({{"name", "adam.step"}, {"shape", shape_t{1}}, {"offset", offset}});
  }

  std::string head = header.dump();
  std::string blob;
  blob.reserve(16 + head.size() + offset);
  blob += "CAPS";
  put_u32(blob, kCheckpointVersion);
  put_u64(blob, (uint64_t)head.size());
  blob += head;
  for (auto& [name, t] : entries) {
    for (long i = 0; i < t->numel(); ++i) put_f32_le(blob, (float)(*t)[i]);
  }
  if (state != nullptr) put_f32_le(blob, (float)state->step);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(blob.data(), (std::streamsize)blob.size());
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

void load_checkpoint(const std::string& path, ModelParams& params, AdamState* state) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (blob.size() < 16) {
    throw std::runtime_error("load_checkpoint: file too short (" + std::to_string(blob.size()) +
                             " bytes) for the fixed header");
  }
  if (blob.compare(0, 4, "CAPS") != 0) {
    throw std::runtime_error("load_checkpoint: bad magic '" + blob.substr(0, 4) +
                             "', expected 'CAPS'");
  }
  uint32_t version = get_u32(blob, 4);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version) +
                             ", expected " + std::to_string(kCheckpointVersion));
  }
  uint64_t head_len = get_u64(blob, 8);
  if (16 + head_len > blob.size()) {
    throw std::runtime_error("load_checkpoint: header length " + std::to_string(head_len) +
                             " exceeds file size " + std::to_string(blob.size()));
  }
  json header;
  try {
    header = json::parse(blob.substr(16, head_len));
  } catch (const std::exception& ex) {
    throw std::runtime_error(std::string("load_checkpoint: bad JSON header: ") + ex.what());
  }
  size_t data_start = 16 + (size_t)head_len;

  struct Entry {
    shape_t shape;
    uint64_t offset;
  };
  std::vector<std::pair<std::string, Entry>> listed;
  for (const auto& item : header) {
    listed.emplace_back(item.at("name").get<std::string>(),
                        Entry{item.at("shape").get<shape_t>(), item.at("offset").get<uint64_t>()});
  }

  auto read_into = [&](const std::string& name, Tensor& dst) {
    auto it = std::find_if(listed.begin(), listed.end(),
                           [&](const auto& p) { return p.first == name; });
    if (it == listed.end()) {
      throw std::runtime_error("load_checkpoint: missing parameter " + name);
    }
    if (it->second.shape != dst.shape) {
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name + ": file has " +
                               shape_str(it->second.shape) + ", model needs " +
                               shape_str(dst.shape));
    }
    size_t off = data_start + (size_t)it->second.offset;
    size_t need = (size_t)dst.numel() * 4;
    if (off + need > blob.size()) {
      throw std::runtime_error("load_checkpoint: truncated data for " + name + " (need " +
                               std::to_string(off + need) + " bytes, file has " +
                               std::to_string(blob.size()) + ")");
    }
    for (long i = 0; i < dst.numel(); ++i) dst[i] = (double)get_f32_le(blob, off + (size_t)i * 4);
  };

  for (auto& [name, t] : params.entries()) read_into(name, *t);
  if (state != nullptr) {
    bool has_adam = std::any_of(listed.begin(), listed.end(), [](const auto& p) {
      return p.first.rfind("adam.", 0) == 0;
    });
    state->m = zeros_like(params);
    state->v = zeros_like(params);
    state->step = 0;
    if (has_adam) {
      for (auto& [name, t] : state->m.entries()) read_into("adam.m." + name, *t);
      for (auto& [name, t] : state->v.entries()) read_into("adam.v." + name, *t);
      Tensor step_t({1});
      read_into("adam.step", step_t);
      state->step = (long)step_t[0];
    }
  }
}

}  // namespace caps
