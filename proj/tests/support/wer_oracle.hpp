#pragma once

#include <cstddef>
#include <string>
#include <tuple>
#include <vector>

namespace mlma::testing {

// Edit counts of one monotone alignment.
struct AlignmentCounts {
  std::size_t subs = 0, ins = 0, dels = 0;

  std::size_t errors() const { return subs + ins + dels; }
  // Fewest edits first, then fewest insertions + deletions.
  bool better_than(const AlignmentCounts& o) const {
    return std::make_tuple(errors(), ins + dels) < std::make_tuple(o.errors(), o.ins + o.dels);
  }
};

// Enumerates every monotone alignment of ref against hyp (match/substitute,
// delete, insert at each step) without memoization and keeps the best one.
// Exponential; meant for sequences of at most a handful of words.
inline void enumerate_alignments(const std::vector<std::string>& ref, const std::vector<std::string>& hyp,
                                 std::size_t i, std::size_t j, AlignmentCounts acc, AlignmentCounts& best,
                                 bool& found) {
  if (i == ref.size() && j == hyp.size()) {
    if (!found || acc.better_than(best)) best = acc;
    found = true;
    return;
  }
  if (i < ref.size() && j < hyp.size()) {
    auto next = acc;
    if (ref[i] != hyp[j]) ++next.subs;
    enumerate_alignments(ref, hyp, i + 1, j + 1, next, best, found);
  }
  if (i < ref.size()) {
    auto next = acc;
    ++next.dels;
    enumerate_alignments(ref, hyp, i + 1, j, next, best, found);
  }
  if (j < hyp.size()) {
    auto next = acc;
    ++next.ins;
    enumerate_alignments(ref, hyp, i, j + 1, next, best, found);
  }
}

inline AlignmentCounts brute_force_alignment(const std::vector<std::string>& ref,
                                             const std::vector<std::string>& hyp) {
  AlignmentCounts best;
  bool found = false;
  enumerate_alignments(ref, hyp, 0, 0, {}, best, found);
  return best;
}

// Exhaustive search over the same alignments with branch and bound: a partial
// alignment is abandoned once its cost plus the insertions or deletions the
// remaining length difference forces cannot beat the best complete one.
// Exact, and fast enough for every pair of sequences up to six words.
inline void search_alignments(const std::vector<std::string>& ref, const std::vector<std::string>& hyp,
                              std::size_t i, std::size_t j, AlignmentCounts acc, AlignmentCounts& best) {
  const std::size_t left_ref = ref.size() - i, left_hyp = hyp.size() - j;
  const std::size_t forced = left_ref > left_hyp ? left_ref - left_hyp : left_hyp - left_ref;
  AlignmentCounts bound = acc;
  bound.ins += forced;
  if (!bound.better_than(best)) return;
  if (left_ref == 0 && left_hyp == 0) {
    best = acc;
    return;
  }
  if (left_ref > 0 && left_hyp > 0) {
    auto next = acc;
    if (ref[i] != hyp[j]) ++next.subs;
    search_alignments(ref, hyp, i + 1, j + 1, next, best);
  }
  if (left_ref > 0) {
    auto next = acc;
    ++next.dels;
    search_alignments(ref, hyp, i + 1, j, next, best);
  }
  if (left_hyp > 0) {
    auto next = acc;
    ++next.ins;
    search_alignments(ref, hyp, i, j + 1, next, best);
  }
}

inline AlignmentCounts branch_and_bound_alignment(const std::vector<std::string>& ref,
                                                  const std::vector<std::string>& hyp) {
  // Worst case: every word substituted or unmatched, plus one to stay strict.
  AlignmentCounts best;
  best.dels = ref.size() + hyp.size() + 1;
  search_alignments(ref, hyp, 0, 0, {}, best);
  return best;
}

}  // namespace mlma::testing
