#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "hiersum/data.hpp"
#include "hiersum/errors.hpp"
#include "hiersum/hier_attention.hpp"
#include "testutil.hpp"

using namespace hiersum;
using testutil::gradcheck_max_rel_err;
using testutil::rand_tensor;

TEST_SUITE("attention") {

TEST_CASE("doc_spans_of_row reads the batch layout") {
  std::vector<RawExample> corpus{{{"a b", "c d e"}, "a"}};
  Vocabulary v = build_vocab(corpus, 1);
  MultiDocExample ex = encode_example(corpus[0], v);
  BatchConfig config{true, true, 64, 16};
  MultiDocBatch batch = make_batch(std::vector<MultiDocExample>{ex}, config);

  std::vector<DocSpan> spans = doc_spans_of_row(batch, 0);
  REQUIRE(spans.size() == 2);
  CHECK(spans[0] == DocSpan{0, 3});  // start token + 2
  CHECK(spans[1] == DocSpan{3, 7});  // start token + 3
  CHECK(batch.input_ids[spans[0].begin] == kSodId);
  CHECK(batch.input_ids[spans[1].begin] == kSodId);

  CHECK_THROWS_AS(doc_spans_of_row(batch, 1), ValidationError);
}

TEST_CASE("equal scores split mass by document scaling then uniformly") {
  Tensor scores = Tensor::from_data({1, 5}, std::vector<double>(5, 0.3));
  std::vector<DocSpan> spans{{0, 2}, {2, 5}};
  std::vector<double> s;
  Tensor w = doc_scaled_softmax(scores, spans, &s);

  CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(w.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(w.data()[1] == doctest::Approx(0.25).epsilon(1e-12));
  for (int j = 2; j < 5; ++j) CHECK(w.data()[j] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("hand-computed two-document weights") {
  Tensor scores = Tensor::from_data({1, 3}, {1.0, 0.0, 0.0});
  std::vector<DocSpan> spans{{0, 2}, {2, 3}};
  std::vector<double> s;
  Tensor w = doc_scaled_softmax(scores, spans, &s);

  CHECK(s[0] == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(s[1] == doctest::Approx(0.2689).epsilon(1e-4));
  CHECK(w.data()[0] == doctest::Approx(0.5344).epsilon(1e-4));
  CHECK(w.data()[1] == doctest::Approx(0.1966).epsilon(1e-4));
  CHECK(w.data()[2] == doctest::Approx(0.2689).epsilon(1e-4));
}

TEST_CASE("weights sum to one, per-document totals equal the scaling factors") {
  std::mt19937_64 rng(0);
  for (int seed = 0; seed < 20; ++seed) {
    rng.seed(seed);
    Tensor scores = rand_tensor({4, 9}, rng, -3.0, 3.0, false);
    std::vector<DocSpan> spans{{0, 3}, {3, 4}, {4, 9}};
    std::vector<double> s;
    Tensor w = doc_scaled_softmax(scores, spans, &s);
    for (int row = 0; row < 4; ++row) {
      double total = 0.0, stotal = 0.0;
      for (size_t d = 0; d < spans.size(); ++d) {
        double doc_mass = 0.0;
        for (int j = spans[d].begin; j < spans[d].end; ++j) doc_mass += w.data()[row * 9 + j];
        CHECK(std::abs(doc_mass - s[row * 3 + d]) < 1e-9);
        total += doc_mass;
        stotal += s[row * 3 + d];
      }
      CHECK(std::abs(total - 1.0) < 1e-9);
      CHECK(std::abs(stotal - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("the document with the most attention mass has the largest scaling factor") {
  std::mt19937_64 rng(31);
  Tensor scores = rand_tensor({1, 8}, rng, -2.0, 2.0, false);
  std::vector<DocSpan> spans{{0, 2}, {2, 6}, {6, 8}};
  std::vector<double> s;
  Tensor w = doc_scaled_softmax(scores, spans, &s);
  int argmax_mass = 0, argmax_s = 0;
  double best_mass = -1.0;
  for (size_t d = 0; d < spans.size(); ++d) {
    double mass = 0.0;
    for (int j = spans[d].begin; j < spans[d].end; ++j) mass += w.data()[j];
    if (mass > best_mass) {
      best_mass = mass;
      argmax_mass = static_cast<int>(d);
    }
    if (s[d] > s[argmax_s]) argmax_s = static_cast<int>(d);
  }
  CHECK(argmax_mass == argmax_s);
}

TEST_CASE("a single document reduces to plain softmax") {
  std::mt19937_64 rng(2);
  Tensor scores = rand_tensor({3, 6}, rng, -2.0, 2.0, false);
  std::vector<DocSpan> spans{{0, 6}};
  std::vector<double> s;
  Tensor hier = doc_scaled_softmax(scores, spans, &s);
  Tensor plain = masked_softmax(scores);
  for (size_t i = 0; i < hier.data().size(); ++i) {
    CHECK(std::abs(hier.data()[i] - plain.data()[i]) < 1e-12);
  }
  for (int row = 0; row < 3; ++row) CHECK(s[row] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("bad spans are rejected") {
  Tensor scores = Tensor::from_data({1, 4}, {1, 2, 3, 4});
  CHECK_THROWS_AS(doc_scaled_softmax(scores, std::vector<DocSpan>{}), ValidationError);
  CHECK_THROWS_AS(doc_scaled_softmax(scores, std::vector<DocSpan>{{0, 2}}), ValidationError);
  CHECK_THROWS_AS(doc_scaled_softmax(scores, std::vector<DocSpan>{{0, 2}, {3, 4}}),
                  ValidationError);
  CHECK_THROWS_AS(doc_scaled_softmax(scores, std::vector<DocSpan>{{0, 2}, {2, 2}, {2, 4}}),
                  ValidationError);
}

TEST_CASE("numeric gradient check") {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor scores = rand_tensor({3, 6}, rng, -2.0, 2.0);
    Tensor values = rand_tensor({3, 6}, rng);
    std::vector<DocSpan> spans{{0, 2}, {2, 5}, {5, 6}};
    std::vector<Tensor> leaves{scores};
    const double err = gradcheck_max_rel_err(leaves, [&] {
      return sum(mul(doc_scaled_softmax(scores, spans), values));
    });
    CHECK(err < 1e-4);
  }
}

}  // TEST_SUITE
