#pragma once

// Synthetic paired features with a controlled mismatching rate, the
// line-delimited dataset format, retrieval recall and identification scores.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace l2rm::data {

using Matrix = Eigen::MatrixXd;

enum class Split : std::uint8_t { kTrain, kTest };

struct PairDataset {
  Matrix v;  // N × d_in_v image features
  Matrix t;  // N × d_in_t caption features
  /// 1 when the pair is semantically matched, 0 for a mismatched pair.
  std::vector<int> m;
  std::vector<int> image_class;
  std::vector<int> caption_class;
  /// Caption was moved by corruption (a same-class move keeps m = 1).
  std::vector<std::uint8_t> permuted;
  std::vector<Split> split;

  int classes = 0;
  double noise = 0.0;
  double mrate = 0.0;
  std::uint64_t seed = 0;

  std::size_t size() const { return m.size(); }
  std::vector<std::size_t> indices(Split which) const;
  void validate() const;
};

struct GenerateOptions {
  Eigen::Index d_in = 32;
  Eigen::Index latent = 16;
};

/// Balanced, shuffled classes; v = A_v·proto + noise, t = A_t·proto + noise.
/// Every pair starts matched and in the training split.
PairDataset generate(std::size_t n, int classes, double noise, std::uint64_t seed,
                     const GenerateOptions& opts = {});

/// Marks a seeded random fraction of the pairs as the clean test split.
void hold_out_test(PairDataset& ds, double fraction, std::uint64_t seed);

/// Deranges the captions of round(mrate·|train|) training pairs among
/// themselves. A selection of size 1 is widened to 2. m becomes 0 exactly
/// where the caption's class now differs from the image's.
PairDataset corrupt(const PairDataset& ds, double mrate, std::uint64_t seed);

/// generate + hold_out_test(test_fraction) + corrupt(mrate), seeds derived from `seed`.
PairDataset make_dataset(std::size_t n, int classes, double noise, double mrate,
                         std::uint64_t seed, double test_fraction = 0.2,
                         const GenerateOptions& opts = {});

Matrix take_rows(const Matrix& x, const std::vector<std::size_t>& idx);

/// One header line, then one JSON record per pair.
void write_jsonl(const PairDataset& ds, std::ostream& os);
PairDataset read_jsonl(std::istream& is);

struct Recall {
  std::vector<int> ks;
  std::vector<double> i2t;  // percent, one per k
  std::vector<double> t2i;
  double rsum = 0.0;
};

/// Recall@K in both directions. truth[i] is the caption column of image i
/// (identity when empty). Ties in similarity rank the lower index first.
Recall recall_at_k(const Matrix& s, const std::vector<int>& ks = {1, 5, 10},
                   const std::vector<std::size_t>& truth = {});

struct Identification {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
};

/// Mismatched is the positive class. `predicted` holds positions into
/// `is_mismatched`. With no positives predicted and none present all three
/// scores are 1; any other 0/0 ratio is 0.
Identification identification_score(const std::vector<std::size_t>& predicted,
                                    const std::vector<bool>& is_mismatched);

}  // namespace l2rm::data
