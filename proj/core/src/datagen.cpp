#include "l2rm/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "l2rm/rng.hpp"

namespace l2rm::data {
namespace {

using nlohmann::json;

const char* split_name(Split s) { return s == Split::kTest ? "test" : "train"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw std::runtime_error("dataset: unknown split '" + s + "'");
}

std::vector<double> row_vector(const Matrix& x, Eigen::Index i) {
  std::vector<double> out(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) out[static_cast<std::size_t>(j)] = x(i, j);
  return out;
}

// Rank of column `target` in row i of s: strictly larger entries, plus equal
// entries at a lower index.
std::size_t rank_in_row(const Matrix& s, Eigen::Index i, Eigen::Index target) {
  const double ref = s(i, target);
  std::size_t r = 0;
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    if (s(i, j) > ref || (s(i, j) == ref && j < target)) ++r;
  }
  return r;
}

}  // namespace

std::vector<std::size_t> PairDataset::indices(Split which) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == which) out.push_back(i);
  }
  return out;
}

void PairDataset::validate() const {
  const auto n = static_cast<Eigen::Index>(size());
  if (v.rows() != n || t.rows() != n || image_class.size() != size() ||
      caption_class.size() != size() || permuted.size() != size() || split.size() != size()) {
    throw std::invalid_argument("PairDataset: field lengths disagree");
  }
  for (std::size_t i = 0; i < size(); ++i) {
    if (m[i] != 0 && m[i] != 1) throw std::invalid_argument("PairDataset: m must be 0 or 1");
    if ((m[i] == 0) != (image_class[i] != caption_class[i])) {
      throw std::invalid_argument("PairDataset: m disagrees with class labels at " + std::to_string(i));
    }
  }
}

PairDataset generate(std::size_t n, int classes, double noise, std::uint64_t seed,
                     const GenerateOptions& opts) {
  if (classes < 2 || n < static_cast<std::size_t>(classes)) {
    throw std::invalid_argument("generate: need n >= classes >= 2");
  }
  if (!(noise >= 0.0)) throw std::invalid_argument("generate: noise must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto gaussian = [&](Eigen::Index r, Eigen::Index c, double sd) {
    return Matrix(Matrix::NullaryExpr(r, c, [&] { return sd * gauss(rng); }));
  };

  const Matrix protos = gaussian(classes, opts.latent, 1.0);
  const double map_sd = 1.0 / std::sqrt(static_cast<double>(opts.latent));
  const Matrix a_v = gaussian(opts.d_in, opts.latent, map_sd);
  const Matrix a_t = gaussian(opts.d_in, opts.latent, map_sd);

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(classes));
  std::shuffle(labels.begin(), labels.end(), rng);

  PairDataset ds;
  const auto rows = static_cast<Eigen::Index>(n);
  ds.v.resize(rows, opts.d_in);
  ds.t.resize(rows, opts.d_in);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto proto = protos.row(labels[static_cast<std::size_t>(i)]).transpose();
    ds.v.row(i) = (a_v * proto).transpose();
    ds.t.row(i) = (a_t * proto).transpose();
  }
  if (noise > 0.0) {
    ds.v += gaussian(rows, opts.d_in, noise);
    ds.t += gaussian(rows, opts.d_in, noise);
  }
  ds.m.assign(n, 1);
  ds.image_class = labels;
  ds.caption_class = labels;
  ds.permuted.assign(n, 0);
  ds.split.assign(n, Split::kTrain);
  ds.classes = classes;
  ds.noise = noise;
  ds.seed = seed;
  return ds;
}

void hold_out_test(PairDataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw std::invalid_argument("hold_out_test: fraction must be in [0, 1)");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size())));
  std::fill(ds.split.begin(), ds.split.end(), Split::kTrain);
  for (std::size_t k = 0; k < n_test; ++k) ds.split[order[k]] = Split::kTest;
}

PairDataset corrupt(const PairDataset& ds, double mrate, std::uint64_t seed) {
  if (!(mrate >= 0.0 && mrate < 1.0)) throw std::invalid_argument("corrupt: mrate must be in [0, 1)");
  PairDataset out = ds;
  out.mrate = mrate;
  std::vector<std::size_t> pool = ds.indices(Split::kTrain);
  auto k = static_cast<std::size_t>(std::llround(mrate * static_cast<double>(pool.size())));
  if (k == 1) k = 2;
  if (k < 2 || pool.size() < 2) return out;

  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<std::size_t> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(chosen.begin(), chosen.end());

  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  auto has_fixed_point = [&] {
    for (std::size_t a = 0; a < k; ++a) {
      if (perm[a] == a) return true;
    }
    return false;
  };
  do {
    std::shuffle(perm.begin(), perm.end(), rng);
  } while (has_fixed_point());

  for (std::size_t a = 0; a < k; ++a) {
    const auto dst = chosen[a];
    const auto src = chosen[perm[a]];
    out.t.row(static_cast<Eigen::Index>(dst)) = ds.t.row(static_cast<Eigen::Index>(src));
    out.caption_class[dst] = ds.caption_class[src];
    out.permuted[dst] = 1;
    out.m[dst] = out.caption_class[dst] == out.image_class[dst] ? 1 : 0;
  }
  return out;
}

PairDataset make_dataset(std::size_t n, int classes, double noise, double mrate,
                         std::uint64_t seed, double test_fraction, const GenerateOptions& opts) {
  PairDataset ds = generate(n, classes, noise, seed, opts);
  hold_out_test(ds, test_fraction, derive_seed(seed, 1));
  return corrupt(ds, mrate, derive_seed(seed, 2));
}

Matrix take_rows(const Matrix& x, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(idx[r]));
  return out;
}

void write_jsonl(const PairDataset& ds, std::ostream& os) {
  ds.validate();
  json header = {{"format", "l2rm-pairs"}, {"version", 1},         {"n", ds.size()},
                 {"d_in_v", ds.v.cols()},  {"d_in_t", ds.t.cols()}, {"classes", ds.classes},
                 {"noise", ds.noise},      {"mrate", ds.mrate},     {"seed", ds.seed}};
  os << header.dump() << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    json rec = {{"index", i},
                {"v_feat", row_vector(ds.v, r)},
                {"t_feat", row_vector(ds.t, r)},
                {"m", ds.m[i]},
                {"class", ds.image_class[i]},
                {"caption_class", ds.caption_class[i]},
                {"permuted", ds.permuted[i] != 0},
                {"split", split_name(ds.split[i])}};
    os << rec.dump() << '\n';
  }
}

PairDataset read_jsonl(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("dataset: empty input");
  const json header = json::parse(line);
  if (header.value("format", "") != "l2rm-pairs" || header.value("version", 0) != 1) {
    throw std::runtime_error("dataset: unsupported header");
  }
  const auto n = header.at("n").get<std::size_t>();
  const auto dv = header.at("d_in_v").get<Eigen::Index>();
  const auto dt = header.at("d_in_t").get<Eigen::Index>();

  PairDataset ds;
  ds.classes = header.at("classes").get<int>();
  ds.noise = header.at("noise").get<double>();
  ds.mrate = header.at("mrate").get<double>();
  ds.seed = header.at("seed").get<std::uint64_t>();
  ds.v.resize(static_cast<Eigen::Index>(n), dv);
  ds.t.resize(static_cast<Eigen::Index>(n), dt);
  ds.m.resize(n);
  ds.image_class.resize(n);
  ds.caption_class.resize(n);
  ds.permuted.resize(n);
  ds.split.resize(n);

  std::vector<bool> seen(n, false);
  for (std::size_t line_no = 2; std::getline(is, line); ++line_no) {
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    const auto i = rec.at("index").get<std::size_t>();
    if (i >= n || seen[i]) throw std::runtime_error("dataset line " + std::to_string(line_no) + ": bad index");
    seen[i] = true;
    const auto vf = rec.at("v_feat").get<std::vector<double>>();
    const auto tf = rec.at("t_feat").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(vf.size()) != dv || static_cast<Eigen::Index>(tf.size()) != dt) {
      throw std::runtime_error("dataset line " + std::to_string(line_no) + ": feature length mismatch");
    }
    const auto r = static_cast<Eigen::Index>(i);
    ds.v.row(r) = Eigen::Map<const Eigen::RowVectorXd>(vf.data(), dv);
    ds.t.row(r) = Eigen::Map<const Eigen::RowVectorXd>(tf.data(), dt);
    ds.m[i] = rec.at("m").get<int>();
    ds.image_class[i] = rec.at("class").get<int>();
    ds.caption_class[i] = rec.value("caption_class", ds.image_class[i]);
    ds.permuted[i] = rec.value("permuted", false) ? 1 : 0;
    ds.split[i] = parse_split(rec.value("split", std::string("train")));
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw std::runtime_error("dataset: header announces " + std::to_string(n) + " records, some are missing");
  }
  ds.validate();
  return ds;
}

Recall recall_at_k(const Matrix& s, const std::vector<int>& ks, const std::vector<std::size_t>& truth) {
  if (s.rows() != s.cols() || s.rows() == 0) throw std::invalid_argument("recall_at_k: need a square similarity");
  const auto n = static_cast<std::size_t>(s.rows());
  std::vector<std::size_t> gt = truth;
  if (gt.empty()) {
    gt.resize(n);
    std::iota(gt.begin(), gt.end(), 0);
  }
  if (gt.size() != n) throw std::invalid_argument("recall_at_k: truth size mismatch");
  std::vector<std::size_t> inverse(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (gt[i] >= n || inverse[gt[i]] != n) throw std::invalid_argument("recall_at_k: truth is not a permutation");
    inverse[gt[i]] = i;
  }
  for (int k : ks) {
    if (k < 1 || static_cast<std::size_t>(k) > n) {
      throw std::invalid_argument("recall_at_k: k=" + std::to_string(k) + " exceeds split size " + std::to_string(n));
    }
  }

  std::vector<std::size_t> rank_i2t(n), rank_t2i(n);
  const Matrix st = s.transpose();
  for (std::size_t i = 0; i < n; ++i) {
    rank_i2t[i] = rank_in_row(s, static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(gt[i]));
    rank_t2i[i] = rank_in_row(st, static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(inverse[i]));
  }
  Recall out;
  out.ks = ks;
  for (int k : ks) {
    const auto kk = static_cast<std::size_t>(k);
    const auto hits = [&](const std::vector<std::size_t>& ranks) {
      return 100.0 * static_cast<double>(std::count_if(ranks.begin(), ranks.end(),
                                                       [&](std::size_t r) { return r < kk; })) /
             static_cast<double>(n);
    };
    out.i2t.push_back(hits(rank_i2t));
    out.t2i.push_back(hits(rank_t2i));
    out.rsum += out.i2t.back() + out.t2i.back();
  }
  return out;
}

Identification identification_score(const std::vector<std::size_t>& predicted,
                                    const std::vector<bool>& is_mismatched) {
  Identification out;
  std::vector<bool> flagged(is_mismatched.size(), false);
  for (std::size_t i : predicted) {
    if (i >= is_mismatched.size()) throw std::invalid_argument("identification_score: index out of range");
    flagged[i] = true;
  }
  for (std::size_t i = 0; i < is_mismatched.size(); ++i) {
    if (flagged[i] && is_mismatched[i]) ++out.true_positive;
    if (flagged[i] && !is_mismatched[i]) ++out.false_positive;
    if (!flagged[i] && is_mismatched[i]) ++out.false_negative;
  }
  const auto tp = static_cast<double>(out.true_positive);
  const double pred = tp + static_cast<double>(out.false_positive);
  const double actual = tp + static_cast<double>(out.false_negative);
  if (pred == 0.0 && actual == 0.0) {
    out.precision = out.recall = out.f1 = 1.0;
    return out;
  }
  out.precision = pred > 0.0 ? tp / pred : 0.0;
  out.recall = actual > 0.0 ? tp / actual : 0.0;
  const double denom = out.precision + out.recall;
  out.f1 = denom > 0.0 ? 2.0 * out.precision * out.recall / denom : 0.0;
  return out;
}

}  // namespace l2rm::data
