#include <random>

#include "doctest.h"

#include "crispr/bias_detector.hpp"
#include "crispr/eval.hpp"
#include "crispr/kernels.hpp"
#include "helpers.hpp"

using namespace crispr;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  Matrix m(r, c);
  for (double& v : m.values()) v = d(rng);
  return m;
}

}  // namespace

TEST_CASE("OpenMP kernels are bit-identical to the serial loops") {
  std::mt19937_64 rng(81);
  for (auto [n, in, out] : {std::tuple{1, 3, 2}, {7, 16, 32}, {257, 96, 130}, {64, 512, 384}}) {
    const Matrix x = random_matrix(n, in, rng), w = random_matrix(in, out, rng);
    const Matrix bias = random_matrix(1, out, rng);
    Matrix a(n, out), b(n, out);
    kernels::linear_serial(x, w, bias.values(), a);
    kernels::linear(x, w, bias.values(), b);
    CHECK(a == b);
    kernels::linear(x, w, {}, b);
    kernels::linear_serial(x, w, {}, a);
    CHECK(a == b);
    const Matrix dy = random_matrix(n, out, rng);
    Matrix da(n, in), db(n, in);
    kernels::linear_backward_input_serial(dy, w, da);
    kernels::linear_backward_input(dy, w, db);
    CHECK(da == db);
  }
}

TEST_CASE("parallel detection and evaluation match serial runs bit for bit") {
  const Model m = testutil::tiny_model(82);
  const Dataset d = testutil::toy_dataset(6);
  const InstructionSet set{{"{context} {question} {choices}", "{question} {choices} {context}"}};
  CHECK(detect(m, d, set, Execution::serial) == detect(m, d, set, Execution::parallel));
  for (Method k : {Method::original, Method::cc, Method::dc}) {
    const auto a = evaluate(m, d, set, k, {Execution::serial, 3, 4});
    const auto b = evaluate(m, d, set, k, {Execution::parallel, 3, 4});
    CHECK(a.to_json() == b.to_json());
  }
}
