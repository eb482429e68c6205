#include "kecae/trainer.hpp"

#include "kecae/errors.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace kecae {

namespace fs = std::filesystem;

Tensor images_to_tensor(const std::vector<const Item *> &items, std::size_t side) {
  std::vector<double> v;
  v.reserve(items.size() * side * side);
  for (const Item *it : items) {
    if (it->image.side == side) {
      v.insert(v.end(), it->image.pixels.begin(), it->image.pixels.end());
    } else {
      const Image r = resize(it->image, side);
      v.insert(v.end(), r.pixels.begin(), r.pixels.end());
    }
  }
  return Tensor::from({items.size(), 1, side, side}, std::move(v));
}

Tensor images_to_tensor(const std::vector<Image> &images, std::size_t side) {
  std::vector<double> v;
  v.reserve(images.size() * side * side);
  for (const Image &img : images) {
    const Image r = resize(img, side);
    v.insert(v.end(), r.pixels.begin(), r.pixels.end());
  }
  return Tensor::from({images.size(), 1, side, side}, std::move(v));
}

namespace {

Image row_image(const Tensor &t, std::size_t n) {
  const std::size_t s = t.dim(2);
  Image img(s);
  for (std::size_t i = 0; i < s * s; ++i)
    img.pixels[i] = t[n * s * s + i];
  return img;
}

Image clamped_row_image(const Tensor &t, std::size_t n) {
  Image img = row_image(t, n);
  for (auto &v : img.pixels)
    v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
  return img;
}

void check_finite(const char *what, double v, std::uint64_t step) {
  if (!std::isfinite(v))
    throw DivergenceError(std::string(what) + " became " + std::to_string(v) + " at step " +
                          std::to_string(step));
}

// Unfreezes the discriminator on scope exit, including error paths.
struct FreezeGuard {
  ParamGroup &group;
  explicit FreezeGuard(ParamGroup &g) : group(g) { group.freeze(); }
  ~FreezeGuard() { group.unfreeze(); }
};

std::string hex(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double unhex(const std::string &s, const fs::path &file) {
  char *end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw DataError(file.string() + ": bad number '" + s + "'");
  return v;
}

std::string report_hex(const LossReport &r) {
  return hex(r.j_mse) + " " + hex(r.j_ce1) + " " + hex(r.j_ce2) + " " + hex(r.j_lda) + " " +
         hex(r.j_total);
}

LossReport parse_report(std::istringstream &is, const fs::path &file) {
  std::string a[5];
  for (auto &s : a)
    if (!(is >> s))
      throw DataError(file.string() + ": truncated loss record");
  return {unhex(a[0], file), unhex(a[1], file), unhex(a[2], file), unhex(a[3], file),
          unhex(a[4], file)};
}

std::string shape_text(const Shape &s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i)
    out += (i ? "x" : "") + std::to_string(s[i]);
  return out.empty() ? "scalar" : out;
}

// Flat list of every persisted array of a model.
struct Slot {
  std::string name;
  Shape shape;
  std::span<double> data;
};

std::vector<Slot> model_slots(KeCaeModel &m) {
  std::vector<Slot> out;
  for (ParamGroup *g : {&m.generator_params, &m.discriminator_params}) {
    for (auto &[name, t] : g->params()) {
      Tensor tt = t;
      out.push_back({g->name() + "/" + name, t.shape(), tt.values()});
    }
    for (auto &[name, t] : g->buffers()) {
      Tensor tt = t;
      out.push_back({g->name() + "/" + name, t.shape(), tt.values()});
    }
  }
  return out;
}

std::vector<Slot> moment_slots(KeCaeModel &m) {
  std::vector<Slot> out;
  for (ParamGroup *g : {&m.generator_params, &m.discriminator_params})
    for (auto &[name, mom] : g->moments()) {
      const Shape s = g->params().at(name).shape();
      out.push_back({g->name() + "/" + name + "#adam_m", s, std::span<double>(mom.m)});
      out.push_back({g->name() + "/" + name + "#adam_v", s, std::span<double>(mom.v)});
    }
  return out;
}

void put_le(std::string &blob, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int i = 0; i < 8; ++i)
    blob.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_le(const std::string &blob, std::size_t off) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[off + i])) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

void write_file(const fs::path &path, const std::string &content) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw DataError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out)
    throw DataError("write failed: " + path.string());
}

std::string read_file(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_slots(const fs::path &dir, const std::vector<Slot> &slots) {
  std::string manifest = "name\tdtype\tshape\toffset\tlength\n";
  std::string blob;
  for (const Slot &s : slots) {
    const std::size_t off = blob.size();
    for (double v : s.data)
      put_le(blob, v);
    manifest += s.name + "\tf64le\t" + shape_text(s.shape) + "\t" + std::to_string(off) + "\t" +
                std::to_string(blob.size() - off) + "\n";
  }
  write_file(dir / "manifest.tsv", manifest);
  write_file(dir / "weights.bin", blob);
}

// Reads manifest + blob into the given slots; every slot must be present
// with the same shape, and no extra entries are allowed.
void read_slots(const fs::path &dir, const std::vector<Slot> &slots) {
  const fs::path mpath = dir / "manifest.tsv";
  const std::string manifest = read_file(mpath);
  const std::string blob = read_file(dir / "weights.bin");
  struct Entry {
    std::string shape;
    std::size_t offset, length;
  };
  std::map<std::string, Entry> entries;
  std::istringstream in(manifest);
  std::string line;
  std::getline(in, line);
  if (line != "name\tdtype\tshape\toffset\tlength")
    throw DataError(mpath.string() + ": bad header");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty())
      continue;
    std::istringstream ls(line);
    std::string name, dtype, shape, off, len;
    if (!std::getline(ls, name, '\t') || !std::getline(ls, dtype, '\t') ||
        !std::getline(ls, shape, '\t') || !std::getline(ls, off, '\t') || !std::getline(ls, len))
      throw DataError(mpath.string() + ":" + std::to_string(lineno) + ": expected 5 columns");
    if (dtype != "f64le")
      throw DataError(mpath.string() + ":" + std::to_string(lineno) + ": unsupported dtype " +
                      dtype);
    try {
      entries[name] = {shape, std::stoull(off), std::stoull(len)};
    } catch (const std::exception &) {
      throw DataError(mpath.string() + ":" + std::to_string(lineno) + ": bad offset/length");
    }
  }
  for (const Slot &s : slots) {
    const auto it = entries.find(s.name);
    if (it == entries.end())
      throw DataError("architecture mismatch: checkpoint " + dir.string() + " lacks " + s.name);
    const Entry &e = it->second;
    if (e.shape != shape_text(s.shape) || e.length != s.data.size() * 8)
      throw DataError("architecture mismatch: " + s.name + " is " + e.shape +
                      " in the checkpoint but " + shape_text(s.shape) + " in the model");
    if (e.offset + e.length > blob.size())
      throw DataError(dir.string() + "/weights.bin: truncated at " + s.name);
    for (std::size_t i = 0; i < s.data.size(); ++i)
      s.data[i] = get_le(blob, e.offset + 8 * i);
    entries.erase(it);
  }
  if (!entries.empty())
    throw DataError("architecture mismatch: checkpoint has unexpected entry " +
                    entries.begin()->first);
}

} // namespace

// ---------------------------------------------------------------------------

Trainer::Trainer(const TrainConfig &cfg) : cfg_(cfg), rng_(derive_seed(cfg.seed, 0x7a11)) {
  cfg_.validate();
  model_ = std::make_unique<KeCaeModel>(cfg_.arch, cfg_.seed);
}

LossReport Trainer::train_step(const std::vector<SamplePair> &batch, std::uint64_t aug_seed,
                               const PhaseObserver &observer) {
  const std::size_t n = batch.size();
  if (n < 2)
    throw DataError("train_step: batch needs at least 2 pairs, got " + std::to_string(n));
  std::vector<const Item *> a, b;
  for (std::size_t i = 0; i < n; ++i) {
    const SamplePair &p = batch[i];
    if (!p.x1 || !p.x2)
      throw DataError("train_step: pair " + std::to_string(i) + " is incomplete");
    if (p.x1->grade != Grade::kl0 || p.x2->grade != Grade::kl2)
      throw DataError("train_step: pair " + std::to_string(i) + " (" + p.x1->id + ", " +
                      p.x2->id + ") must be (kl0, kl2), got (" + grade_name(p.x1->grade) + ", " +
                      grade_name(p.x2->grade) + ")");
    a.push_back(p.x1);
    b.push_back(p.x2);
  }
  auto notify = [&](Phase ph) {
    if (observer)
      observer(ph, *model_);
  };
  KeCaeModel &m = *model_;
  const std::size_t side = cfg_.arch.input_side;
  const Tensor x1 = images_to_tensor(a, side);
  const Tensor x2 = images_to_tensor(b, side);
  const Tensor real = concat({x1, x2}, 0);
  const std::uint64_t step = global_step_;

  // (1) discriminator on real, optionally augmented, inputs
  Tensor disc_in = real;
  if (cfg_.augment) {
    std::vector<Image> aug;
    aug.reserve(2 * n);
    for (std::size_t i = 0; i < 2 * n; ++i) {
      Rng r(derive_seed(aug_seed, i));
      aug.push_back(augment(row_image(real, i), r, cfg_.aug));
    }
    disc_in = images_to_tensor(aug, side);
  }
  m.discriminator_params.zero_grad();
  const DiscOutput d = m.discriminator.discriminate(patch_pairs(disc_in), Mode::train);
  const Tensor ce1 = j_ce1({narrow(d.logits, 0, 0, n)}, {narrow(d.logits, 0, n, n)});
  check_finite("J_CE1", ce1.item(), step);
  backward(ce1);
  adam_step(m.discriminator_params, {cfg_.lr_disc});
  notify(Phase::disc_update);

  LossReport report;
  {
    // (2)..(9): the discriminator stays frozen; gradients still pass through it.
    FreezeGuard frozen(m.discriminator_params);
    notify(Phase::freeze);

    m.generator_params.zero_grad();
    const LatentPair lat = m.encoder.encode(real, Mode::train);
    const LatentPair p1 = slice(lat, 0, n), p2 = slice(lat, n, n);
    const Tensor rec = m.decoder.decode(concat({fuse(p1), fuse(p2)}, 0), Mode::train);
    notify(Phase::reconstruct);

    const Tensor jm = j_mse(x1, narrow(rec, 0, 0, n), x2, narrow(rec, 0, n, n));
    notify(Phase::mse);

    const auto [h1x, h2x] = exchange(p1, p2);
    const Tensor ex = m.decoder.decode(concat({h1x, h2x}, 0), Mode::train);
    notify(Phase::exchange);

    // X1' is scored as KL-2 and X2' as KL-0.
    const DiscOutput dx = m.discriminator.discriminate(patch_pairs(ex), Mode::eval);
    const Tensor ce2 = j_ce2({narrow(dx.logits, 0, 0, n)}, {narrow(dx.logits, 0, n, n)});
    notify(Phase::ce_swapped);

    const Tensor lda = j_lda(p1, p2, cfg_.lda_eps);
    notify(Phase::lda);

    const Tensor obj = generator_objective(jm, ce2, lda, cfg_.weights);
    check_finite("J_MSE", jm.item(), step);
    check_finite("J_CE2", ce2.item(), step);
    check_finite("J_LDA", lda.item(), step);
    backward(obj);
    adam_step(m.generator_params, {cfg_.lr_gen});
    notify(Phase::gen_update);

    report = j_total(jm.item(), ce1.item(), ce2.item(), lda.item(), cfg_.weights);
    m.generator_params.zero_grad();
  }
  notify(Phase::unfreeze);
  return report;
}

void Trainer::fit(const SplitSet &train, const std::vector<PairRef> &pairs, const fs::path &run_dir,
                  const FitOptions &opts) {
  if (pairs.empty())
    throw DataError("fit: empty pair list");
  for (const auto &[i, j] : pairs)
    if (i >= train.kl0.size() || j >= train.kl2.size())
      throw DataError("fit: pair (" + std::to_string(i) + ", " + std::to_string(j) +
                      ") outside the training set");
  const fs::path ckpt = run_dir / "checkpoint";
  if (opts.resume && fs::exists(ckpt / "manifest.tsv")) {
    load_checkpoint(ckpt);
    spdlog::info("resumed from {} at step {} (epoch {}, batch {})", ckpt.string(), global_step_,
                 epoch_, next_batch_);
  }
  if (opts.write_files)
    fs::create_directories(run_dir);

  const std::size_t bs = std::min(cfg_.batch_size, pairs.size());
  const std::size_t nb = std::max<std::size_t>(1, pairs.size() / bs);
  auto save = [&] {
    if (!opts.write_files)
      return;
    save_checkpoint(ckpt);
    write_metrics(run_dir);
  };

  while (epoch_ < cfg_.epochs) {
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i)
      order[i] = i;
    Rng shuffle(derive_seed(cfg_.seed, 0xe90c, epoch_));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle.below(i)]);

    while (next_batch_ < nb) {
      // The last batch absorbs the remainder so every pair is visited.
      const std::size_t begin = next_batch_ * bs;
      const std::size_t end = next_batch_ + 1 == nb ? pairs.size() : begin + bs;
      std::vector<SamplePair> batch;
      for (std::size_t k = begin; k < end; ++k) {
        const auto [i, j] = pairs[order[k]];
        batch.push_back({&train.kl0[i], &train.kl2[j]});
      }
      const LossReport r = train_step(batch, rng_.next());
      step_losses_.push_back(r);
      epoch_sum_.j_mse += r.j_mse;
      epoch_sum_.j_ce1 += r.j_ce1;
      epoch_sum_.j_ce2 += r.j_ce2;
      epoch_sum_.j_lda += r.j_lda;
      epoch_sum_.j_total += r.j_total;
      ++epoch_steps_;
      ++global_step_;
      ++next_batch_;
      if (next_batch_ == nb) {
        const double k = static_cast<double>(epoch_steps_);
        LossReport mean = epoch_sum_;
        mean.j_mse /= k;
        mean.j_ce1 /= k;
        mean.j_ce2 /= k;
        mean.j_lda /= k;
        mean.j_total /= k;
        history_.push_back({epoch_, mean});
        spdlog::info("epoch {:3d}  mse {:.6f}  ce1 {:.4f}  ce2 {:.4f}  lda {:.4f}  total {:.6f}",
                     epoch_, mean.j_mse, mean.j_ce1, mean.j_ce2, mean.j_lda, mean.j_total);
        epoch_sum_ = {};
        epoch_steps_ = 0;
        next_batch_ = 0;
        ++epoch_;
        save();
        break;
      }
      const bool periodic = cfg_.checkpoint_every && global_step_ % cfg_.checkpoint_every == 0;
      const bool stopping = opts.stop_after_step && global_step_ >= *opts.stop_after_step;
      if (periodic || stopping)
        save();
      if (stopping)
        return;
    }
    if (opts.stop_after_step && global_step_ >= *opts.stop_after_step)
      return;
  }
}

void Trainer::write_metrics(const fs::path &run_dir) const {
  std::string csv = "epoch,j_mse,j_ce1,j_ce2,j_lda,j_total\n";
  char buf[256];
  for (const auto &e : history_) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.mean.j_mse,
                  e.mean.j_ce1, e.mean.j_ce2, e.mean.j_lda, e.mean.j_total);
    csv += buf;
  }
  write_file(run_dir / "metrics.csv", csv);
  std::string steps = "step,j_mse,j_ce1,j_ce2,j_lda,j_total\n";
  for (std::size_t i = 0; i < step_losses_.size(); ++i) {
    const auto &r = step_losses_[i];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", i, r.j_mse, r.j_ce1,
                  r.j_ce2, r.j_lda, r.j_total);
    steps += buf;
  }
  write_file(run_dir / "steps.csv", steps);
}

void Trainer::save_checkpoint(const fs::path &dir) const {
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  auto &m = const_cast<KeCaeModel &>(*model_);
  std::vector<Slot> slots = model_slots(m);
  const std::vector<Slot> moments = moment_slots(m);
  slots.insert(slots.end(), moments.begin(), moments.end());
  write_slots(tmp, slots);
  write_file(tmp / "config.txt", train_config_text(cfg_));
  write_file(tmp / "rng.txt", rng_.serialize() + "\n");

  std::string prog;
  prog += "global_step " + std::to_string(global_step_) + "\n";
  prog += "epoch " + std::to_string(epoch_) + "\n";
  prog += "next_batch " + std::to_string(next_batch_) + "\n";
  prog += "adam_step generator " + std::to_string(m.generator_params.step()) + "\n";
  prog += "adam_step discriminator " + std::to_string(m.discriminator_params.step()) + "\n";
  prog += "epoch_steps " + std::to_string(epoch_steps_) + "\n";
  prog += "epoch_sum " + report_hex(epoch_sum_) + "\n";
  for (const auto &e : history_)
    prog += "history " + std::to_string(e.epoch) + " " + report_hex(e.mean) + "\n";
  for (const auto &r : step_losses_)
    prog += "step " + report_hex(r) + "\n";
  write_file(tmp / "progress.txt", prog);

  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

void Trainer::load_checkpoint(const fs::path &dir) {
  const TrainConfig saved = read_checkpoint_config(dir);
  if (!(saved.arch == cfg_.arch))
    throw DataError("architecture mismatch: checkpoint " + dir.string() +
                    " was trained with a different arch configuration");
  KeCaeModel &m = *model_;
  std::vector<Slot> slots = model_slots(m);
  const std::vector<Slot> moments = moment_slots(m);
  slots.insert(slots.end(), moments.begin(), moments.end());
  read_slots(dir, slots);

  {
    std::string line = read_file(dir / "rng.txt");
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r'))
      line.pop_back();
    try {
      rng_ = Rng::deserialize(line);
    } catch (const ParseError &e) {
      throw DataError((dir / "rng.txt").string() + ": " + e.what());
    }
  }

  const fs::path ppath = dir / "progress.txt";
  std::istringstream in(read_file(ppath));
  history_.clear();
  step_losses_.clear();
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "global_step") {
      ls >> global_step_;
    } else if (key == "epoch") {
      ls >> epoch_;
    } else if (key == "next_batch") {
      ls >> next_batch_;
    } else if (key == "adam_step") {
      std::string group;
      std::uint64_t s = 0;
      ls >> group >> s;
      (group == "generator" ? m.generator_params : m.discriminator_params).set_step(s);
    } else if (key == "epoch_steps") {
      ls >> epoch_steps_;
    } else if (key == "epoch_sum") {
      epoch_sum_ = parse_report(ls, ppath);
    } else if (key == "history") {
      EpochMetrics e;
      ls >> e.epoch;
      e.mean = parse_report(ls, ppath);
      history_.push_back(e);
    } else if (key == "step") {
      step_losses_.push_back(parse_report(ls, ppath));
    } else if (!key.empty()) {
      throw DataError(ppath.string() + ": unknown record '" + key + "'");
    }
    if (ls.fail())
      throw DataError(ppath.string() + ": malformed record '" + line + "'");
  }
}

TrainConfig read_checkpoint_config(const fs::path &dir) {
  const fs::path p = dir / "config.txt";
  return parse_train_config(read_file(p), p.string());
}

std::unique_ptr<KeCaeModel> load_model(const fs::path &dir) {
  const TrainConfig cfg = read_checkpoint_config(dir);
  auto model = std::make_unique<KeCaeModel>(cfg.arch, cfg.seed);
  load_weights(dir, *model);
  return model;
}

void load_weights(const fs::path &dir, KeCaeModel &model) {
  const TrainConfig cfg = read_checkpoint_config(dir);
  if (!(cfg.arch == model.arch))
    throw DataError("architecture mismatch: checkpoint " + dir.string() +
                    " does not match the requested model");
  std::vector<Slot> slots = model_slots(model);
  const std::vector<Slot> moments = moment_slots(model);
  slots.insert(slots.end(), moments.begin(), moments.end());
  read_slots(dir, slots);
}

// ---------------------------------------------------------------------------

std::string output_kind_name(OutputKind k) {
  switch (k) {
  case OutputKind::recon1:
    return "recon1";
  case OutputKind::recon2:
    return "recon2";
  case OutputKind::exchanged1:
    return "exchanged1";
  case OutputKind::exchanged2:
    return "exchanged2";
  }
  return "?";
}

std::vector<GeneratedImage> generate(KeCaeModel &model, const SplitSet &set,
                                     const std::vector<PairRef> &pairs, std::size_t batch_size) {
  NoGradGuard no_grad;
  const std::size_t side = model.arch.input_side;
  std::vector<GeneratedImage> out;
  out.reserve(4 * pairs.size());
  for (std::size_t begin = 0; begin < pairs.size(); begin += batch_size) {
    const std::size_t end = std::min(pairs.size(), begin + batch_size);
    std::vector<const Item *> a, b;
    for (std::size_t k = begin; k < end; ++k) {
      a.push_back(&set.kl0.at(pairs[k].first));
      b.push_back(&set.kl2.at(pairs[k].second));
    }
    const LatentPair p1 = model.encoder.encode(images_to_tensor(a, side), Mode::eval);
    const LatentPair p2 = model.encoder.encode(images_to_tensor(b, side), Mode::eval);
    const Tensor r1 = model.decoder.decode(fuse(p1), Mode::eval);
    const Tensor r2 = model.decoder.decode(fuse(p2), Mode::eval);
    const auto [h1x, h2x] = exchange(p1, p2);
    const Tensor e1 = model.decoder.decode(h1x, Mode::eval);
    const Tensor e2 = model.decoder.decode(h2x, Mode::eval);
    for (std::size_t k = 0; k < a.size(); ++k) {
      const std::string &i1 = a[k]->id, &i2 = b[k]->id;
      out.push_back({clamped_row_image(r1, k), Grade::kl0, OutputKind::recon1, i1, i2});
      out.push_back({clamped_row_image(r2, k), Grade::kl2, OutputKind::recon2, i1, i2});
      // Exchanged outputs take the label of the key they received.
      out.push_back({clamped_row_image(e1, k), Grade::kl2, OutputKind::exchanged1, i1, i2});
      out.push_back({clamped_row_image(e2, k), Grade::kl0, OutputKind::exchanged2, i1, i2});
    }
  }
  return out;
}

Latents encode_items(KeCaeModel &model, const std::vector<const Item *> &items,
                     std::size_t batch_size) {
  NoGradGuard no_grad;
  Latents out;
  for (std::size_t begin = 0; begin < items.size(); begin += batch_size) {
    const std::size_t end = std::min(items.size(), begin + batch_size);
    const std::vector<const Item *> chunk(items.begin() + begin, items.begin() + end);
    const LatentPair p =
        model.encoder.encode(images_to_tensor(chunk, model.arch.input_side), Mode::eval);
    const std::size_t f = p.hU.numel() / chunk.size();
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      out.hU.emplace_back(p.hU.values().begin() + k * f, p.hU.values().begin() + (k + 1) * f);
      out.hK.emplace_back(p.hK.values().begin() + k * f, p.hK.values().begin() + (k + 1) * f);
    }
  }
  return out;
}

} // namespace kecae
