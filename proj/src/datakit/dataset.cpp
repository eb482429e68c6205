#include "kecae/data.hpp"

#include "kecae/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace kecae {

namespace fs = std::filesystem;

SplitCounts split_counts(std::size_t total) {
  // Integer round-half-up of 10% and 20%.
  const std::size_t val = (total + 5) / 10;
  const std::size_t test = (2 * total + 5) / 10;
  return {total - val - test, val, test};
}

Splits split_oversample(std::vector<Item> kl0, std::vector<Item> kl2, std::uint64_t seed) {
  if (kl0.empty() || kl2.empty())
    throw DataError("split_oversample: empty class (kl0=" + std::to_string(kl0.size()) +
                    ", kl2=" + std::to_string(kl2.size()) + ")");
  if (kl0.size() < 10 || kl2.size() < 10)
    throw DataError("split_oversample: need at least 10 items per class (kl0=" +
                    std::to_string(kl0.size()) + ", kl2=" + std::to_string(kl2.size()) + ")");
  const std::size_t target = std::max(kl0.size(), kl2.size());
  const SplitCounts counts = split_counts(target);

  Splits out;
  for (Grade g : {Grade::kl0, Grade::kl2}) {
    std::vector<Item> &items = g == Grade::kl0 ? kl0 : kl2;
    if (items.size() <= counts.val + counts.test)
      throw DataError("split_oversample: class " + grade_name(g) + " has " +
                      std::to_string(items.size()) + " originals, fewer than val+test+1 = " +
                      std::to_string(counts.val + counts.test + 1));
    Rng rng(derive_seed(seed, 0x5e17, static_cast<std::uint64_t>(g)));
    for (std::size_t i = items.size(); i > 1; --i)
      std::swap(items[i - 1], items[rng.below(i)]);

    auto &val = out.val.of(g);
    auto &test = out.test.of(g);
    auto &train = out.train.of(g);
    std::size_t k = 0;
    for (; k < counts.val; ++k)
      val.push_back(std::move(items[k]));
    for (; k < counts.val + counts.test; ++k)
      test.push_back(std::move(items[k]));
    for (; k < items.size(); ++k)
      train.push_back(std::move(items[k]));

    const std::size_t originals = train.size();
    std::map<std::string, std::size_t> dup_count;
    while (train.size() < counts.train) {
      Item dup = train[rng.below(originals)];
      dup.id = dup.source + "_dup" + std::to_string(dup_count[dup.source]++);
      train.push_back(std::move(dup));
    }
  }
  return out;
}

PairIndex make_pairs(std::size_t n0, std::size_t n2) {
  if (n0 == 0 || n2 == 0)
    throw std::invalid_argument("make_pairs: both classes must be non-empty");
  return PairIndex(n0, n2);
}

std::vector<PairRef> sample_pairs(const PairIndex &index, std::uint64_t n, std::uint64_t seed) {
  const std::uint64_t total = index.size();
  if (n > total)
    throw std::out_of_range("sample_pairs: requested " + std::to_string(n) + " pairs but only " +
                            std::to_string(total) + " exist");
  Rng rng(derive_seed(seed, 0x9a1e));
  std::vector<std::uint64_t> picked;
  picked.reserve(n);
  if (n == total) {
    for (std::uint64_t i = 0; i < total; ++i)
      picked.push_back(i);
  } else {
    // Floyd's algorithm: n distinct draws in O(n) expected time.
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(n * 2);
    for (std::uint64_t j = total - n; j < total; ++j) {
      const std::uint64_t t = rng.below(j + 1);
      const std::uint64_t v = seen.insert(t).second ? t : j;
      if (v == j)
        seen.insert(j);
      picked.push_back(v);
    }
  }
  for (std::size_t i = picked.size(); i > 1; --i)
    std::swap(picked[i - 1], picked[rng.below(i)]);
  std::vector<PairRef> out;
  out.reserve(picked.size());
  for (std::uint64_t v : picked)
    out.push_back(index.at(v));
  return out;
}

// ---------------------------------------------------------------------------
// PGM

namespace {

unsigned char quantize(double v) {
  return static_cast<unsigned char>(std::lround(v * 255.0));
}

class PgmReader {
public:
  explicit PgmReader(const std::vector<unsigned char> &b) : b_(b) {}

  void expect_magic() {
    if (b_.size() < 2 || b_[0] != 'P' || b_[1] != '5')
      throw ParseError("pgm: missing P5 magic", 0);
    pos_ = 2;
  }

  std::size_t number(const char *what) {
    skip_space_and_comments();
    if (pos_ >= b_.size())
      throw ParseError(std::string("pgm: unexpected end of header reading ") + what, pos_);
    if (b_[pos_] < '0' || b_[pos_] > '9')
      throw ParseError(std::string("pgm: expected digit for ") + what, pos_);
    std::size_t v = 0;
    while (pos_ < b_.size() && b_[pos_] >= '0' && b_[pos_] <= '9') {
      v = v * 10 + (b_[pos_] - '0');
      if (v > 1'000'000)
        throw ParseError(std::string("pgm: ") + what + " too large", pos_);
      ++pos_;
    }
    return v;
  }

  void single_space() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_]))
      throw ParseError("pgm: expected whitespace after maxval", pos_);
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

private:
  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n')
          ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char> &b_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> slurp(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

std::vector<unsigned char> encode_pgm(const Image &img) {
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double v = img.pixels[i];
    if (!(v >= 0.0 && v <= 1.0))
      throw DataError("pgm: pixel " + std::to_string(i) + " = " + std::to_string(v) +
                      " outside [0, 1]");
  }
  const std::string header =
      "P5\n" + std::to_string(img.side) + " " + std::to_string(img.side) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(header.size() + img.pixels.size());
  for (double v : img.pixels)
    out.push_back(quantize(v));
  return out;
}

Image decode_pgm(const std::vector<unsigned char> &bytes) {
  PgmReader r(bytes);
  r.expect_magic();
  const std::size_t w = r.number("width");
  const std::size_t h = r.number("height");
  const std::size_t maxval = r.number("maxval");
  if (maxval == 0 || maxval > 255)
    throw ParseError("pgm: maxval " + std::to_string(maxval) + " not in 1..255", r.pos());
  if (w == 0 || w != h)
    throw ParseError("pgm: expected a non-empty square image, got " + std::to_string(w) + "x" +
                         std::to_string(h),
                     r.pos());
  r.single_space();
  const std::size_t start = r.pos();
  if (bytes.size() - start < w * h)
    throw ParseError("pgm: truncated pixel data, expected " + std::to_string(w * h) +
                         " bytes, found " + std::to_string(bytes.size() - start),
                     bytes.size());
  Image img(w);
  for (std::size_t i = 0; i < w * h; ++i)
    img.pixels[i] = static_cast<double>(bytes[start + i]) / static_cast<double>(maxval);
  return img;
}

void write_pgm(const fs::path &path, const Image &img) {
  const auto bytes = encode_pgm(img);
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw DataError("write failed: " + path.string());
}

void write_pgm_clamped(const fs::path &path, const Image &img) {
  Image c = img;
  for (auto &v : c.pixels)
    v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
  write_pgm(path, c);
}

Image read_pgm(const fs::path &path) {
  return decode_pgm(slurp(path));
}

// ---------------------------------------------------------------------------
// CSV and directory layout

namespace {

std::string strip_dup_suffix(const std::string &id) {
  const auto p = id.find("_dup");
  return p == std::string::npos ? id : id.substr(0, p);
}

std::vector<std::string> split_csv(const std::string &line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ','))
    out.push_back(cell);
  if (!line.empty() && line.back() == ',')
    out.emplace_back();
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace

void write_attributes(const fs::path &path, const std::vector<const Item *> &items) {
  std::ofstream out(path);
  if (!out)
    throw DataError("cannot write " + path.string());
  out << "id,class,gap_width,osteo_amp,seed\n";
  for (const Item *it : items)
    out << it->id << ',' << grade_name(it->grade) << ',' << fmt_double(it->gap_width) << ','
        << fmt_double(it->osteo_amp) << ',' << it->seed << '\n';
  if (!out)
    throw DataError("write failed: " + path.string());
}

std::vector<Item> read_attributes(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "id,class,gap_width,osteo_amp,seed")
    throw DataError(path.string() + ": bad header, expected id,class,gap_width,osteo_amp,seed");
  std::vector<Item> items;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty())
      continue;
    const auto cells = split_csv(line);
    if (cells.size() != 5)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    Item it;
    it.id = cells[0];
    it.source = strip_dup_suffix(cells[0]);
    try {
      it.grade = parse_grade(cells[1]);
      it.gap_width = std::stod(cells[2]);
      it.osteo_amp = std::stod(cells[3]);
      it.seed = std::stoull(cells[4]);
    } catch (const std::exception &e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    items.push_back(std::move(it));
  }
  return items;
}

void write_item_set(const fs::path &dir, const SplitSet &set) {
  std::vector<const Item *> all;
  for (Grade g : {Grade::kl0, Grade::kl2}) {
    const fs::path sub = dir / grade_name(g);
    fs::create_directories(sub);
    for (const Item &it : set.of(g)) {
      write_pgm(sub / (it.id + ".pgm"), it.image);
      all.push_back(&it);
    }
  }
  write_attributes(dir / "attributes.csv", all);
}

SplitSet read_item_set(const fs::path &dir) {
  SplitSet set;
  for (Item &it : read_attributes(dir / "attributes.csv")) {
    it.image = read_pgm(dir / grade_name(it.grade) / (it.id + ".pgm"));
    set.of(it.grade).push_back(std::move(it));
  }
  return set;
}

void write_splits(const fs::path &dir, const Splits &s) {
  write_item_set(dir / "train", s.train);
  write_item_set(dir / "val", s.val);
  write_item_set(dir / "test", s.test);
}

Splits read_splits(const fs::path &dir) {
  return {read_item_set(dir / "train"), read_item_set(dir / "val"), read_item_set(dir / "test")};
}

void write_pairs_csv(const fs::path &path, const SplitSet &set,
                     const std::vector<PairRef> &pairs) {
  std::ofstream out(path);
  if (!out)
    throw DataError("cannot write " + path.string());
  out << "kl0_id,kl2_id\n";
  for (const auto &[a, b] : pairs)
    out << set.kl0.at(a).id << ',' << set.kl2.at(b).id << '\n';
  if (!out)
    throw DataError("write failed: " + path.string());
}

std::vector<PairRef> read_pairs_csv(const fs::path &path, const SplitSet &set) {
  std::map<std::string, std::size_t> idx0, idx2;
  for (std::size_t i = 0; i < set.kl0.size(); ++i)
    idx0[set.kl0[i].id] = i;
  for (std::size_t i = 0; i < set.kl2.size(); ++i)
    idx2[set.kl2[i].id] = i;
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "kl0_id,kl2_id")
    throw DataError(path.string() + ": bad header, expected kl0_id,kl2_id");
  std::vector<PairRef> pairs;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty())
      continue;
    const auto cells = split_csv(line);
    if (cells.size() != 2)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 2 fields");
    const auto a = idx0.find(cells[0]);
    const auto b = idx2.find(cells[1]);
    if (a == idx0.end() || b == idx2.end())
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": pair must be (kl0 id, kl2 id) from the training split, got " + cells[0] +
                      "," + cells[1]);
    pairs.emplace_back(a->second, b->second);
  }
  return pairs;
}

} // namespace kecae
