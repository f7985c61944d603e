#include <doctest.h>

#include <thread>

#include "gaia/error.hpp"
#include "gaia/notifier.hpp"
#include "gaia/series_store.hpp"
#include "gaia/text_template.hpp"
#include "support.hpp"

using namespace gaia;
using namespace gaia::notify;
using gaia::testing::at;

namespace {

constexpr const char* kLab = "site1/buildingA/floor2/lab-x";

rules::Rule lights_rule(std::string tmpl = "Turn-off the light when leaving") {
  rules::Rule r;
  r.id = "lights-off";
  r.name = "Turn-off the light";
  r.target = kLab;
  r.suggestion_template = std::move(tmpl);
  return r;
}

rules::TriggerEvent lights_event(const char* when = "2017-03-01T17:15:00Z") {
  rules::TriggerEvent ev;
  ev.rule_id = "lights-off";
  ev.target = kLab;
  ev.fired_at = at(when);
  ev.bindings.push_back({rules::MetricRef{kLab, SensorKind::light_state, std::nullopt}, 1.0, at("2017-03-01T17:10:00Z")});
  ev.bindings.push_back({rules::MetricRef{kLab, SensorKind::occupancy_count, std::nullopt}, 0.0, at(when)});
  return ev;
}

}  // namespace

TEST_SUITE("notifier") {

TEST_CASE("templates") {
  CHECK(render_template("{resource} uses {value} W", {{"resource", "lab"}, {"value", "12"}}) == "lab uses 12 W");
  CHECK(render_template("{{literal}}", {}) == "{literal}");
  CHECK(template_placeholders("{a} and {b}") == std::vector<std::string>{"a", "b"});
  CHECK_THROWS_AS(render_template("{missing}", {}), Error);
  CHECK_THROWS_AS(template_placeholders("{open"), Error);
  CHECK_THROWS_AS(template_placeholders("{}"), Error);
}

TEST_CASE("compose renders the suggestion and describes the trigger") {
  const auto n = compose_notification(lights_event(), lights_rule());
  CHECK(n.suggestion == "Turn-off the light when leaving");
  CHECK(n.rule_id == "lights-off");
  CHECK(n.resource_path == kLab);
  CHECK(n.id.empty());
  CHECK(n.event_description.find("light_state@" + std::string(kLab) + "=1") != std::string::npos);
  CHECK(n.event_description.find("occupancy_count@" + std::string(kLab) + "=0") != std::string::npos);
  CHECK(n.event_description.starts_with("Turn-off the light on " + std::string(kLab) + " at 2017-03-01T17:15:00Z"));

  const auto t = compose_notification(lights_event(), lights_rule("{metric} is {value} in {resource}"));
  CHECK(t.suggestion == "light_state is 1 in " + std::string(kLab));
}

TEST_CASE("compose is pure and rejects unbound placeholders") {
  const auto a = compose_notification(lights_event(), lights_rule());
  const auto b = compose_notification(lights_event(), lights_rule());
  CHECK(a == b);
  try {
    compose_notification(lights_event(), lights_rule("Check {bogus}"));
    FAIL("composed");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::template_error);
  }
}

TEST_CASE("subscribers receive matching notifications only") {
  model::TreeRegistry tree(testing::school_tree());
  ManualClock clock(at("2017-03-01T17:15:00Z"));
  Notifier notifier(tree, nullptr, clock.clock());
  auto building = notifier.subscribe("a", "site1/buildingA");
  auto room = notifier.subscribe("b", kLab);
  auto other = notifier.subscribe("c", "site1/buildingB");
  auto alerts = notifier.subscribe("d", "", std::set<rules::Category>{rules::Category::alert});
  const auto n = notifier.notify(lights_event(), lights_rule());
  CHECK(n.id == "n-00000001");
  CHECK(n.emitted_at == at("2017-03-01T17:15:00Z"));
  CHECK(building->try_next() == n);
  CHECK(room->try_next() == n);
  CHECK_FALSE(other->try_next());
  CHECK_FALSE(alerts->try_next());
  CHECK(notifier.log().size() == 1);
  CHECK(notifier.log("site1/buildingB").empty());
  CHECK_THROWS_AS(notifier.subscribe("x", "site1/nowhere"), Error);
}

TEST_CASE("delivery counts") {
  model::TreeRegistry tree(testing::school_tree());
  ManualClock clock(at("2017-03-01T17:15:00Z"));
  Notifier notifier(tree, nullptr, clock.clock());
  auto a = notifier.subscribe("a", "site1");
  auto b = notifier.subscribe("b", kLab);
  auto n = compose_notification(lights_event(), lights_rule());
  n.id = "n-x1";
  n.emitted_at = clock.now();
  CHECK(notifier.publish(n) == 2);
  notifier.unsubscribe(a);
  notifier.unsubscribe(b);
  CHECK(a->closed());
  n.id = "n-x2";
  CHECK(notifier.publish(n) == 0);
  CHECK(notifier.log_size() == 2);
}

TEST_CASE("a full queue disconnects the slow subscriber") {
  model::TreeRegistry tree(testing::school_tree());
  ManualClock clock(at("2017-03-01T17:15:00Z"));
  Notifier notifier(tree, nullptr, clock.clock(), NotifierConfig{2});
  auto slow = notifier.subscribe("slow", "");
  for (int i = 0; i < 3; ++i) notifier.notify(lights_event(), lights_rule());
  CHECK(slow->closed());
  CHECK(notifier.subscriber_count() == 0);
  CHECK(slow->try_next());
  CHECK(slow->try_next());
  CHECK_FALSE(slow->try_next());
  CHECK(notifier.log_size() == 3);
}

TEST_CASE("concurrent notifications arrive in log order") {
  model::TreeRegistry tree(testing::school_tree());
  ManualClock clock(at("2017-03-01T17:15:00Z"));
  Notifier notifier(tree, nullptr, clock.clock());
  auto sub = notifier.subscribe("ws", "");
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 25; ++i) notifier.notify(lights_event(), lights_rule());
    });
  }
  for (auto& t : threads) t.join();
  const auto log = notifier.log();
  REQUIRE(log.size() == 100);
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto got = sub->next(std::chrono::milliseconds(100));
    REQUIRE(got);
    CHECK(got->id == log[i].id);
    if (i > 0) CHECK(log[i].id > log[i - 1].id);
  }
}

TEST_CASE("the log survives a restart") {
  model::TreeRegistry tree(testing::school_tree());
  ManualClock clock(at("2017-03-01T17:15:00Z"));
  store::DocStore docs;
  {
    Notifier notifier(tree, &docs, clock.clock());
    notifier.notify(lights_event(), lights_rule());
    clock.advance(Seconds{3600});
    notifier.notify(lights_event("2017-03-01T18:15:00Z"), lights_rule());
  }
  Notifier notifier(tree, &docs, clock.clock());
  REQUIRE(notifier.log_size() == 2);
  CHECK(notifier.log("", at("2017-03-01T18:00:00Z")).size() == 1);
  CHECK(notifier.log("", std::nullopt, 1).front().id == "n-00000001");
  CHECK(notifier.notify(lights_event(), lights_rule()).id == "n-00000003");
  const auto j = to_json(notifier.log().front());
  CHECK(j["resource"] == kLab);
  CHECK(notification_from_json(j) == notifier.log().front());
}

TEST_CASE("close_all ends every subscription") {
  model::TreeRegistry tree(testing::school_tree());
  ManualClock clock;
  Notifier notifier(tree, nullptr, clock.clock());
  auto a = notifier.subscribe("a", "");
  int calls = 0;
  a->set_listener([&] { ++calls; });
  notifier.close_all();
  CHECK(a->closed());
  CHECK(calls == 1);
  CHECK_FALSE(a->next(std::chrono::milliseconds(10)));
}

}  // TEST_SUITE
