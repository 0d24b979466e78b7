from selfselect.seeding import stable_seed


def test_stable_across_calls():
    assert stable_seed("a", 1, ("x", 2)) == stable_seed("a", 1, ("x", 2))


def test_distinct_parts_give_distinct_seeds():
    seen = {stable_seed("p", i) for i in range(1000)}
    assert len(seen) == 1000


def test_part_boundaries_matter():
    # ("ab", "c") must not collide with ("a", "bc")
    assert stable_seed("ab", "c") != stable_seed("a", "bc")


def test_range_fits_a_signed_64_bit_seed():
    for parts in [(), ("x",), (1, 2, 3), ("long " * 50,)]:
        value = stable_seed(*parts)
        assert 0 <= value < 2 ** 63
