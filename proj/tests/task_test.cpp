// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#include <gtest/gtest.h>

#include <sstream>

#include "dprompt/reference_model.hpp"
#include "dprompt/synthetic.hpp"
#include "dprompt/task.hpp"

namespace dprompt {
namespace {

TEST(Builtins, TemplatesAndVerbalizers) {
  const auto sst2 = builtin_task("sst2");
  EXPECT_EQ(sst2.template_text, "{x} It was");
  EXPECT_EQ(sst2.labels(), (std::vector<std::string>{"positive", "negative"}));
  const auto amazon = builtin_task("amazon");
  EXPECT_EQ(amazon.template_text, "{x} It was");
  EXPECT_EQ(amazon.labels(), (std::vector<std::string>{"positive", "negative"}));
  const auto agnews = builtin_task("agnews");
  EXPECT_EQ(agnews.template_text, "{x} It is about");
  EXPECT_EQ(agnews.labels(), (std::vector<std::string>{"politics", "sports", "business", "technology"}));
  EXPECT_THROW(builtin_task("rte"), TaskSpecError);
}

TEST(Builtins, DomainStrings) {
  EXPECT_EQ(builtin_task("sst2").domain_string, "This is a movie review");
  EXPECT_EQ(builtin_task("amazon").domain_string, "This is an Amazon product review");
  EXPECT_EQ(builtin_task("agnews").domain_string, "This is a news");
  const auto words = builtin_task("sst2").domain_words;
  EXPECT_NE(std::find(words.begin(), words.end(), "cinima"), words.end());
}

TEST(Builtins, BindToReferenceModel) {
  ReferenceModel model(0);
  for (const auto& t : builtin_tasks()) {
    const auto bound = bind(t, model);
    EXPECT_EQ(bound.num_labels(), t.verbalizer.size());
    for (std::size_t y = 0; y < bound.num_labels(); ++y)
      EXPECT_EQ(model.embedding_table().token_text(bound.label_tokens[y]), t.verbalizer[y].word);
  }
}

TEST(Render, SubstitutesSlot) {
  const auto t = builtin_task("sst2");
  EXPECT_EQ(render_text(t, "Terrible service."), "Terrible service. It was");
  EXPECT_EQ(render_text(t, ""), " It was");
  ReferenceModel model(0);
  EXPECT_EQ(model.detokenize(render(t, "good", model)), "good it was");
}

TEST(Validate, RejectsBadSpecs) {
  auto t = builtin_task("sst2");
  t.template_text = "It was";
  EXPECT_THROW(validate(t), TaskSpecError);
  t.template_text = "{x} {x}";
  EXPECT_THROW(validate(t), TaskSpecError);
  t = builtin_task("sst2");
  t.verbalizer[1].word = "positive";
  EXPECT_THROW(validate(t), TaskSpecError);
  t = builtin_task("sst2");
  t.verbalizer.pop_back();
  EXPECT_THROW(validate(t), TaskSpecError);
}

TEST(Bind, RejectsMultiTokenAndUnknownWords) {
  ReferenceModel model(0);
  auto t = builtin_task("sst2");
  t.verbalizer[0].word = "very good";
  EXPECT_THROW(bind(t, model), TaskSpecError);
  t.verbalizer[0].word = "splendid";  // out of vocabulary -> <unk>
  EXPECT_THROW(bind(t, model), TaskSpecError);
}

TEST(TaskJson, RoundTripAndObjectVerbalizer) {
  for (const auto& t : builtin_tasks()) {
    const auto back = task_from_json(to_json(t));
    EXPECT_EQ(back.id, t.id);
    EXPECT_EQ(back.template_text, t.template_text);
    EXPECT_EQ(back.labels(), t.labels());
    EXPECT_EQ(back.domain_words, t.domain_words);
  }
  const auto j = nlohmann::ordered_json::parse(
      R"({"id":"x","template":"{x} It was","verbalizer":{"neg":"bad","pos":"good"},"domain_string":"d"})");
  const auto t = task_from_json(j);
  EXPECT_EQ(t.labels(), (std::vector<std::string>{"neg", "pos"}));
  EXPECT_THROW(task_from_json(nlohmann::ordered_json::parse(R"({"id":"x"})")), TaskSpecError);
}

TEST(Jsonl, LabelsByNameOrIndex) {
  std::istringstream in(R"({"text":"a","label":"negative"}

{"text":"b","label":0}
{"text":"c"}
)");
  const auto data = parse_jsonl(in, builtin_task("sst2"));
  ASSERT_EQ(data.size(), 3u);
  EXPECT_EQ(*data[0].label, 1u);
  EXPECT_EQ(*data[1].label, 0u);
  EXPECT_FALSE(data[2].label);
  EXPECT_FALSE(all_labeled(data));
}

TEST(Jsonl, ErrorsNameTheLine) {
  const auto task = builtin_task("sst2");
  auto fails_on = [&](const std::string& text, const std::string& where) {
    std::istringstream in(text);
    try {
      parse_jsonl(in, task);
      ADD_FAILURE() << "no error for " << text;
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find(where), std::string::npos) << e.what();
    }
  };
  fails_on("{\"text\":\"a\"}\n{bad", "line 2");
  fails_on("{\"text\":\"a\",\"label\":\"neutral\"}", "line 1");
  fails_on("{\"text\":\"a\",\"label\":5}", "line 1");
  fails_on("{\"label\":0}", "line 1");
}

TEST(Synthetic, BalancedAndSeparable) {
  const auto data = make_synthetic_examples(200, 11);
  ASSERT_EQ(data.size(), 200u);
  std::size_t pos = 0;
  SyntheticTaskOptions opt;
  for (const auto& e : data) {
    pos += *e.label == 0;
    const auto& own = *e.label == 0 ? opt.positive_words : opt.negative_words;
    const auto& other = *e.label == 0 ? opt.negative_words : opt.positive_words;
    bool has_own = false;
    std::istringstream words(e.text);
    for (std::string w; words >> w;) {
      has_own |= std::find(own.begin(), own.end(), w) != own.end();
      EXPECT_EQ(std::find(other.begin(), other.end(), w), other.end());
    }
    EXPECT_TRUE(has_own) << e.text;
  }
  EXPECT_EQ(pos, 100u);
  const auto again = make_synthetic_examples(200, 11);
  for (std::size_t i = 0; i < data.size(); ++i) EXPECT_EQ(data[i].text, again[i].text);
}

}  // namespace
}  // namespace dprompt
