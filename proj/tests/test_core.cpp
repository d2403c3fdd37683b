#include <map>
#include <set>

#include "doctest.h"
#include "trellis/replica.hpp"
#include "trellis/types.hpp"

using namespace trellis;

namespace {

Entry cmd(const std::string& id) { return Entry::cmd(Command{id, "p-" + id}); }

Entry cfg(const std::string& id, std::vector<std::string> members) {
    Configuration c;
    c.id = ConfigId{id};
    for (auto& m : members) c.members.push_back(NodeId{m});
    return Entry::cfg(c);
}

}  // namespace

TEST_CASE("entry accessors distinguish commands from configurations") {
    Entry a = cmd("x1");
    CHECK_FALSE(a.is_config());
    CHECK(a.command().id == "x1");
    CHECK(a.entry_id() == "x1");

    Entry b = cfg("C1", {"n1", "n2"});
    CHECK(b.is_config());
    CHECK(b.config().members.size() == 2);
    CHECK(b.entry_id() == "C1");
}

TEST_CASE("first_config_index finds the earliest configuration entry") {
    EntrySeq s;
    CHECK_FALSE(first_config_index(s).has_value());

    s.push_back(cmd("a"));
    s.push_back(cmd("b"));
    CHECK_FALSE(first_config_index(s).has_value());

    s.push_back(cfg("C1", {"n1"}));
    s.push_back(cmd("c"));
    s.push_back(cfg("C2", {"n2"}));
    auto idx = first_config_index(s);
    REQUIRE(idx.has_value());
    CHECK(*idx == 2);
}

TEST_CASE("is_prefix") {
    EntrySeq a{cmd("a"), cmd("b")};
    EntrySeq b{cmd("a"), cmd("b"), cfg("C1", {"n1"})};
    EntrySeq c{cmd("a"), cmd("x")};

    CHECK(is_prefix(a, b));
    CHECK_FALSE(is_prefix(b, a));
    CHECK(is_prefix(a, a));
    CHECK(is_prefix({}, a));
    CHECK_FALSE(is_prefix(c, b));
}

TEST_CASE("decommission rule over observed delivery logs") {
    Configuration parent{ConfigId{"C0"}, {NodeId{"a"}, NodeId{"b"}, NodeId{"c"}}};
    Configuration succ{ConfigId{"C1"}, {NodeId{"b"}, NodeId{"c"}, NodeId{"d"}}};
    ConfigId s = succ.id;

    SUBCASE("nobody delivered anything") {
        std::map<NodeId, std::set<ConfigId>> delivered;
        auto [minorityOk, fullOk] = decommission_safe(parent, succ, delivered);
        CHECK_FALSE(minorityOk);
        CHECK_FALSE(fullOk);
    }

    SUBCASE("a majority of the parent delivered the successor") {
        // a and b are two of the parent's three members: a minority of the
        // parent may retire, but d has not caught up so not all of it may.
        std::map<NodeId, std::set<ConfigId>> delivered{{NodeId{"a"}, {s}}, {NodeId{"b"}, {s}}};
        auto [minorityOk, fullOk] = decommission_safe(parent, succ, delivered);
        CHECK(minorityOk);
        CHECK_FALSE(fullOk);
    }

    SUBCASE("a majority of the successor delivered it too") {
        std::map<NodeId, std::set<ConfigId>> delivered{
            {NodeId{"a"}, {s}}, {NodeId{"b"}, {s}}, {NodeId{"d"}, {s}}};
        auto [minorityOk, fullOk] = decommission_safe(parent, succ, delivered);
        CHECK(minorityOk);
        CHECK(fullOk);
    }

    SUBCASE("the two tallies are independent") {
        // c and d are a majority of the successor, but only c is a parent
        // member, one short of a parent majority.
        std::map<NodeId, std::set<ConfigId>> delivered{{NodeId{"c"}, {s}}, {NodeId{"d"}, {s}}};
        auto [minorityOk, fullOk] = decommission_safe(parent, succ, delivered);
        CHECK_FALSE(minorityOk);
        CHECK(fullOk);
    }

    SUBCASE("deliveries of other configurations do not count") {
        std::map<NodeId, std::set<ConfigId>> delivered{
            {NodeId{"a"}, {ConfigId{"C9"}}}, {NodeId{"b"}, {ConfigId{"C9"}}}};
        auto [minorityOk, fullOk] = decommission_safe(parent, succ, delivered);
        CHECK_FALSE(minorityOk);
        CHECK_FALSE(fullOk);
    }
}
