#include <cstdlib>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "support/fixtures.hpp"
#include "xlc/dataset.hpp"

using fixtures::data_path;
using xlc::LanguageCode;

namespace {

const std::string kHeader = R"({"schema":"makqa/1","languages":["En","Zh"]})";

std::string qa_line(const std::string& id, const std::string& en_answer = "Paris",
                    const std::string& zh_answer = "巴黎") {
  return R"({"id":")" + id +
         R"(","domain":"geography","entity":"France","relation":"capital","q":{"En":"What is the capital of France?","Zh":"法国的首都是哪里？"},"a":{"En":")" +
         en_answer + R"(","Zh":")" + zh_answer + R"("}})";
}

xlc::Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return xlc::parse_dataset(in);
}

}  // namespace

TEST(Dataset, LoadsSmallFixture) {
  const auto d = xlc::load_dataset(data_path("makqa_small.jsonl"));
  EXPECT_EQ(d.languages, (xlc::Languages{LanguageCode("En"), LanguageCode("Zh")}));
  EXPECT_EQ(d.qa_items.size(), 3u);
  EXPECT_EQ(d.timeliness_items.size(), 1u);
  EXPECT_EQ(d.domain_counts(), (std::map<std::string, std::size_t>{{"geography", 2}, {"science", 1}}));
  EXPECT_EQ(d.few_shot_pool.at("geography").size(), 2u);
  EXPECT_EQ(d.timeliness_items[0].ranks(), 3u);
  EXPECT_EQ(d.timeliness_items[0].at(LanguageCode("En")).candidates.front(), "António Guterres");
  ASSERT_NE(d.find_qa("geo-02"), nullptr);
  EXPECT_EQ(d.find_qa("geo-02")->at(LanguageCode("Zh")).answer, "阿根廷");
  EXPECT_EQ(d.find_qa("nope"), nullptr);
}

TEST(Dataset, UndeclaredLanguagesKeptButNotEvaluated) {
  const auto d = xlc::load_dataset(data_path("makqa_small.jsonl"));
  const auto* item = d.find_qa("geo-02");
  ASSERT_NE(item, nullptr);
  EXPECT_EQ(item->entries.count(LanguageCode("Ja")), 1u);
  std::ostringstream out;
  xlc::write_dataset(out, d);
  EXPECT_NE(out.str().find("アルゼンチン"), std::string::npos);
}

TEST(Dataset, MissingDeclaredAnswerNamesItem) {
  try {
    xlc::load_dataset(data_path("makqa_misaligned.jsonl"));
    FAIL() << "expected DatasetError";
  } catch (const xlc::DatasetError& e) {
    EXPECT_EQ(e.item_id(), "geo-02");
    EXPECT_NE(std::string(e.what()).find("Zh"), std::string::npos) << e.what();
  }
  const auto d = xlc::parse_dataset_file(data_path("makqa_misaligned.jsonl"));
  const auto report = xlc::validate_alignment(d);
  ASSERT_EQ(report.violations.size(), 1u);
  EXPECT_EQ(report.violations[0].item_id, "geo-02");
}

TEST(Dataset, ValidFixtureHasEmptyReport) {
  const auto d = xlc::parse_dataset_file(data_path("makqa_e2e.jsonl"));
  EXPECT_TRUE(xlc::validate_alignment(d).ok());
  EXPECT_EQ(d.qa_items.size(), 20u);
  EXPECT_EQ(d.timeliness_items.size(), 4u);
  EXPECT_EQ(d.languages.size(), 3u);
}

TEST(Dataset, EmptyAnswerIsOneViolation) {
  const auto d = parse(kHeader + "\n" + qa_line("a1", "") + "\n" + qa_line("a2") + "\n");
  const auto report = xlc::validate_alignment(d);
  ASSERT_EQ(report.violations.size(), 1u);
  EXPECT_EQ(report.violations[0].item_id, "a1");
}

TEST(Dataset, UnequalCandidateListsAreOneViolation) {
  const auto d = parse(
      kHeader + "\n" + qa_line("a1") + "\n" +
      R"({"id":"t1","type":"timeliness","q":{"En":"Who?","Zh":"谁？"},"candidates":{"En":["A","B"],"Zh":["甲","乙","丙"]}})" +
      "\n");
  const auto report = xlc::validate_alignment(d);
  ASSERT_EQ(report.violations.size(), 1u);
  EXPECT_EQ(report.violations[0].item_id, "t1");
}

TEST(Dataset, EmptyCandidateListIsViolation) {
  const auto d = parse(
      kHeader + "\n" +
      R"({"id":"t1","type":"timeliness","q":{"En":"Who?","Zh":"谁？"},"candidates":{"En":[],"Zh":[]}})" +
      "\n");
  EXPECT_FALSE(xlc::validate_alignment(d).ok());
}

TEST(Dataset, DuplicateIdRejected) {
  const auto d = parse(kHeader + "\n" + qa_line("a1") + "\n" + qa_line("a1") + "\n");
  const auto report = xlc::validate_alignment(d);
  ASSERT_EQ(report.violations.size(), 1u);
  EXPECT_NE(report.violations[0].message.find("duplicate"), std::string::npos);
}

TEST(Dataset, SingleLanguageRejected) {
  const auto d = parse(R"({"schema":"makqa/1","languages":["En"]})"
                       "\n");
  EXPECT_FALSE(xlc::validate_alignment(d).ok());
}

TEST(Dataset, MalformedRecordReportsLine) {
  try {
    parse(kHeader + "\n" + qa_line("a1") + "\n{not json\n");
    FAIL() << "expected DatasetError";
  } catch (const xlc::DatasetError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  try {
    parse(kHeader + "\n" + R"({"id":"a1","q":{},"a":{}})" + "\n");
    FAIL() << "expected DatasetError";
  } catch (const xlc::DatasetError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_EQ(e.item_id(), "a1");
  }
  EXPECT_THROW(parse(qa_line("a1") + "\n"), xlc::DatasetError);
  EXPECT_THROW(parse(R"({"schema":"makqa/9","languages":["En","Zh"]})"), xlc::DatasetError);
}

TEST(Dataset, MissingFileIsIoError) {
  EXPECT_THROW(xlc::load_dataset("/nonexistent/makqa.jsonl"), xlc::IoError);
}

TEST(Dataset, TextIsNfcNormalized) {
  const auto d = parse(kHeader + "\n" + qa_line("a1", "Cafe\xCC\x81") + "\n");
  EXPECT_EQ(d.qa_items[0].at(LanguageCode("En")).answer, "Caf\xC3\xA9");
}

TEST(Dataset, RoundTripThroughFileFormat) {
  for (const char* name : {"makqa_small.jsonl", "makqa_e2e.jsonl"}) {
    const auto d = xlc::load_dataset(data_path(name));
    fixtures::TempDir dir;
    {
      std::ostringstream out;
      xlc::write_dataset(out, d);
      fixtures::write_file(dir / "copy.jsonl", out.str());
    }
    EXPECT_EQ(xlc::load_dataset(dir / "copy.jsonl"), d) << name;
  }
}

TEST(Dataset, FixingReportedViolationMakesFileLoad) {
  fixtures::TempDir dir;
  std::string text = fixtures::read_file(data_path("makqa_misaligned.jsonl"));
  fixtures::write_file(dir / "bad.jsonl", text);
  EXPECT_THROW(xlc::load_dataset(dir / "bad.jsonl"), xlc::DatasetError);
  const std::string broken = R"("a": {"En": "Argentina", "Ja": "アルゼンチン"})";
  const auto at = text.find(broken);
  ASSERT_NE(at, std::string::npos);
  text.replace(at, broken.size(), R"("a": {"En": "Argentina", "Zh": "阿根廷", "Ja": "アルゼンチン"})");
  fixtures::write_file(dir / "fixed.jsonl", text);
  EXPECT_NO_THROW(xlc::load_dataset(dir / "fixed.jsonl"));
}

TEST(Dataset, LanguageSubset) {
  const auto d = xlc::load_dataset(data_path("makqa_e2e.jsonl"));
  const auto sub = d.with_languages({LanguageCode("Zh"), LanguageCode("En")});
  EXPECT_EQ(sub.languages, (xlc::Languages{LanguageCode("Zh"), LanguageCode("En")}));
  EXPECT_EQ(sub.qa_items.size(), d.qa_items.size());
  EXPECT_THROW(d.with_languages({LanguageCode("Fr")}), xlc::Error);
}

TEST(Dataset, FileHashIsStable) {
  const auto a = xlc::file_sha256(data_path("makqa_small.jsonl"));
  EXPECT_EQ(a.size(), 64u);
  EXPECT_EQ(a, xlc::file_sha256(data_path("makqa_small.jsonl")));
  EXPECT_NE(a, xlc::file_sha256(data_path("makqa_e2e.jsonl")));
}

// Needs the full release file; set XLC_MAKQA_PATH to run.
TEST(Dataset, FullReleaseDomainCounts) {
  const char* path = std::getenv("XLC_MAKQA_PATH");
  if (path == nullptr) GTEST_SKIP() << "XLC_MAKQA_PATH not set";
  const auto d = xlc::load_dataset(path);
  const std::map<std::string, std::size_t> expected{
      {"sports", 253}, {"movie", 432},     {"science", 492},
      {"history", 389}, {"geography", 286}, {"literature", 165}};
  auto counts = d.domain_counts();
  for (const auto& [domain, n] : expected) EXPECT_EQ(counts[domain], n) << domain;
  EXPECT_EQ(d.timeliness_items.size(), 136u);
}
