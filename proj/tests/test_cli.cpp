#include <catch2/catch_amalgamated.hpp>
TEST_CASE("test_cli: placeholder") { REQUIRE(true); }
