#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crex/eval.hpp"
#include "crex/tiny_backbone.hpp"
#include "crex/trainer.hpp"
#include "support.hpp"

using testsupport::FakeBackbone;
using testsupport::TempDir;

TEST_CASE("combine_losses matches hand-computed values and boundaries") {
  CHECK(crex::combine_losses(1.0, 2.0, 3.0, 0.5, 0.5) == 1.75);
  CHECK(crex::combine_losses(1.0, 2.0, 3.0, 0.6, 0.5) == Catch::Approx(1.6).margin(1e-15));

  // At the corners exactly one view survives, with no floating-point residue.
  CHECK(crex::combine_losses(2.0, 5.0, 7.0, 1.0, 0.3) == 2.0);
  CHECK(crex::combine_losses(2.0, 5.0, 7.0, 0.0, 1.0) == 5.0);
  CHECK(crex::combine_losses(2.0, 5.0, 7.0, 0.0, 0.0) == 7.0);

  CHECK_THROWS_AS(crex::combine_losses(-1.0, 0.0, 0.0, 0.5, 0.5), crex::ValidationError);
  CHECK_THROWS_AS(crex::combine_losses(0.0, std::nan(""), 0.0, 0.5, 0.5),
                  crex::ValidationError);
  CHECK_THROWS_AS(crex::combine_losses(0.0, 0.0, INFINITY, 0.5, 0.5), crex::ValidationError);
  CHECK_THROWS_AS(crex::combine_losses(1.0, 1.0, 1.0, 1.5, 0.5), crex::ValidationError);
  CHECK_THROWS_AS(crex::combine_losses(1.0, 1.0, 1.0, 0.5, -0.1), crex::ValidationError);
}

TEST_CASE("combine_losses agrees with an independently expanded form") {
  // Oracle: the fully expanded polynomial, evaluated in a different
  // association order than the implementation's nested form.
  auto expanded = [](double a, double r, double d, double alpha, double beta) {
    return alpha * a + beta * r - alpha * beta * r + d - beta * d - alpha * d +
           alpha * beta * d;
  };
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> loss(0.0, 20.0), unit(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = loss(rng), r = loss(rng), d = loss(rng);
    const double alpha = unit(rng), beta = unit(rng);
    const double got = crex::combine_losses(a, r, d, alpha, beta);
    CHECK(std::abs(got - expanded(a, r, d, alpha, beta)) <= 1e-12);
    // Convexity: the result never leaves the hull of the three losses.
    CHECK(got >= std::min({a, r, d}) - 1e-12);
    CHECK(got <= std::max({a, r, d}) + 1e-12);
  }
}

TEST_CASE("each view is pushed with its closed-form gradient weight") {
  const auto instances = testsupport::synthetic_instances(2, 2);
  const auto space = testsupport::synthetic_space(2);
  std::map<std::string, std::string> rationales;
  for (const auto& inst : instances) rationales[inst.id] = "Keyword marks the relation.";

  crex::TrainOptions opt;
  opt.alpha = 0.6;
  opt.beta = 0.5;
  opt.epochs = 1;
  opt.batch_size = 4;

  SECTION("all three views, one batch") {
    FakeBackbone fake;
    crex::train_on_instances(fake, instances, rationales, space, opt);
    REQUIRE(fake.steps.size() == 3);
    CHECK(fake.steps[0].weight == Catch::Approx(0.6));
    CHECK(fake.steps[1].weight == Catch::Approx(0.4 * 0.5));
    CHECK(fake.steps[2].weight == Catch::Approx(0.4 * 0.5));
    CHECK(fake.optimizer_calls == 1);
    CHECK(fake.last_learning_rate == opt.learning_rate);
    // The rationale view's target carries the closing sentence.
    CHECK(fake.steps[1].batch.targets[0].find(crex::kAnswerSentinel) != std::string::npos);
    // The deduction view sees question + rationale and emits the label.
    CHECK(fake.steps[2].batch.inputs[0].find("Keyword marks") != std::string::npos);
    CHECK(fake.steps[2].batch.targets[0].find("link") != std::string::npos);
  }

  SECTION("disabling deduction moves its share onto the rationale view") {
    FakeBackbone fake;
    opt.deduction_enabled = false;
    crex::train_on_instances(fake, instances, rationales, space, opt);
    REQUIRE(fake.steps.size() == 2);
    CHECK(fake.steps[0].weight == Catch::Approx(0.6));
    CHECK(fake.steps[1].weight == Catch::Approx(0.4));  // beta_eff = 1
  }

  SECTION("alpha = 1 trains the answer view alone") {
    FakeBackbone fake;
    opt.alpha = 1.0;
    crex::train_on_instances(fake, instances, rationales, space, opt);
    REQUIRE(fake.steps.size() == 1);
    CHECK(fake.steps[0].weight == 1.0);
  }

  SECTION("missing rationales are an error, not a silent skip") {
    FakeBackbone fake;
    rationales.erase(instances[2].id);
    CHECK_THROWS_WITH(crex::train_on_instances(fake, instances, rationales, space, opt),
                      Catch::Matchers::ContainsSubstring("no rationale for"));
  }
}

TEST_CASE("epoch shuffling is seeded and batches partition the data") {
  const auto instances = testsupport::synthetic_instances(2, 5);  // 10 examples
  const auto space = testsupport::synthetic_space(2);
  std::map<std::string, std::string> rationales;
  for (const auto& inst : instances) rationales[inst.id] = "Keyword marks the relation.";

  crex::TrainOptions opt;
  opt.epochs = 1;
  opt.batch_size = 4;
  opt.seed = 77;

  auto answer_inputs = [](const FakeBackbone& fake) {
    std::vector<std::string> seen;
    for (std::size_t s = 0; s < fake.steps.size(); s += 3)  // answer view comes first
      for (const auto& in : fake.steps[s].batch.inputs) seen.push_back(in);
    return seen;
  };

  FakeBackbone a, b;
  crex::train_on_instances(a, instances, rationales, space, opt);
  crex::train_on_instances(b, instances, rationales, space, opt);
  CHECK(a.steps.size() == 9);  // batches of 4, 4, 2 -> three views each
  CHECK(a.optimizer_calls == 3);
  CHECK(answer_inputs(a) == answer_inputs(b));

  FakeBackbone c;
  opt.seed = 78;
  crex::train_on_instances(c, instances, rationales, space, opt);
  CHECK(answer_inputs(a) != answer_inputs(c));

  // Every example appears exactly once per epoch.
  auto seen = answer_inputs(a);
  std::sort(seen.begin(), seen.end());
  std::vector<std::string> expect;
  for (const auto& inst : instances) expect.push_back(crex::render_question(inst));
  std::sort(expect.begin(), expect.end());
  CHECK(seen == expect);
}

TEST_CASE("loss log lines carry stage, epoch and per-view means") {
  TempDir dir;
  const auto instances = testsupport::synthetic_instances(2, 2);
  const auto space = testsupport::synthetic_space(2);
  std::map<std::string, std::string> rationales;
  for (const auto& inst : instances) rationales[inst.id] = "Keyword marks the relation.";

  crex::TrainOptions opt;
  opt.epochs = 2;
  opt.batch_size = 8;
  opt.stage = 1;
  opt.task_index = 3;

  {
    crex::LossLogger logger(dir / "loss.jsonl");
    FakeBackbone fake;
    crex::train_on_instances(fake, instances, rationales, space, opt, &logger);
  }
  std::ifstream in(dir / "loss.jsonl");
  std::string line;
  std::vector<nlohmann::json> lines;
  while (std::getline(in, line)) lines.push_back(nlohmann::json::parse(line));
  REQUIRE(lines.size() == 8);  // 2 epochs x (answer, rationale, deduction, combined)
  CHECK(lines[0].at("view") == "answer");
  CHECK(lines[3].at("view") == "combined");
  CHECK(lines[0].at("task_index") == 3);
  CHECK(lines[4].at("epoch") == 1);
  for (const auto& j : lines) CHECK(j.at("mean_loss").get<double>() == 1.0);
}

TEST_CASE("beta = 1 leaves the deduction view out of the log") {
  TempDir dir;
  const auto instances = testsupport::synthetic_instances(1, 2);
  const auto space = testsupport::synthetic_space(1);
  std::map<std::string, std::string> rationales;
  for (const auto& inst : instances) rationales[inst.id] = "Keyword marks the relation.";

  crex::TrainOptions opt;
  opt.beta = 1.0;
  opt.epochs = 1;
  opt.batch_size = 8;
  crex::LossLogger logger(dir / "loss.jsonl");
  FakeBackbone fake;
  crex::train_on_instances(fake, instances, rationales, space, opt, &logger);
  CHECK(fake.steps.size() == 2);  // deduction weight is zero, pass skipped

  std::ifstream in(dir / "loss.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    CHECK(nlohmann::json::parse(line).at("view") != "deduction");
  }
  CHECK(n == 3);
}

TEST_CASE("multitask training overfits a small keyword corpus") {
  const auto instances = testsupport::synthetic_instances(2, 8);
  const auto space = testsupport::synthetic_space(2);
  std::map<std::string, std::string> rationales;
  for (const auto& inst : instances)
    rationales[inst.id] =
        "The keyword between the entities marks the relation directly.";

  crex::TinyBackboneConfig cfg;
  cfg.embed_dim = 12;
  cfg.hidden_dim = 48;
  cfg.max_input_length = 224;
  cfg.max_output_length = 128;
  cfg.seed = 5;
  crex::TinyBackbone model(cfg);

  crex::TrainOptions opt;
  opt.alpha = 0.6;
  opt.beta = 0.5;
  opt.learning_rate = 5e-3;
  opt.epochs = 100;
  opt.batch_size = 8;
  opt.seed = 1;

  const crex::TrainStats stats =
      crex::train_on_instances(model, instances, rationales, space, opt);
  CHECK(stats.epochs == 100);
  CHECK(stats.final_answer_loss < 0.1);

  const crex::EvalResult result = crex::evaluate_accuracy(model, instances, space);
  CHECK(result.accuracy == 1.0);

  // Identical seeds and data reproduce the run bit for bit.
  crex::TinyBackbone twin(cfg);
  const crex::TrainStats stats2 =
      crex::train_on_instances(twin, instances, rationales, space, opt);
  CHECK(stats2.final_combined_loss == stats.final_combined_loss);
  twin.set_training(false);
  model.set_training(false);
  const auto q = crex::render_question(instances[0]);
  CHECK(twin.generate({q}) == model.generate({q}));
}
