#include "surealm/synthetic.hpp"

#include <array>
#include <string_view>
#include <unordered_set>

#include "surealm/types.hpp"

namespace surealm {

namespace {

constexpr std::array<std::string_view, 24> kNameFirst = {
    "golden", "silver", "royal",  "little", "grand",  "old",    "blue",   "green",
    "red",    "white",  "happy",  "lucky",  "quiet",  "sunny",  "rustic", "bright",
    "cozy",   "noble",  "wild",   "hidden", "merry",  "velvet", "amber",  "copper"};
constexpr std::array<std::string_view, 24> kNameSecond = {
    "lion",   "garden",  "river",  "oak",     "star",   "bridge",  "castle", "harbor",
    "mill",   "crown",   "fox",    "lantern", "meadow", "tower",   "anchor", "willow",
    "falcon", "orchard", "kettle", "pearl",   "badger", "thistle", "heron",  "compass"};
constexpr std::array<std::string_view, 12> kAreas = {
    "north",     "south",  "east",      "west",     "centre",  "riverside",
    "uptown",    "docklands", "old town", "seafront", "market square", "university quarter"};
constexpr std::array<std::string_view, 16> kFoods = {
    "italian",  "chinese",    "indian",  "thai",    "french",   "mexican",
    "greek",    "korean",     "japanese", "spanish", "turkish", "lebanese",
    "vietnamese", "ethiopian", "british", "caribbean"};
constexpr std::array<std::string_view, 6> kPrices = {"cheap",     "moderate", "expensive",
                                                     "luxury", "budget", "affordable"};
constexpr std::array<std::string_view, 16> kStreets = {
    "baker",  "mill lane", "king",  "queen",     "church", "station", "park",   "high",
    "bridge road", "castle hill", "elm", "victoria", "albert", "regent", "chapel", "cedar"};
constexpr std::array<std::string_view, 7> kDays = {"monday", "tuesday",  "wednesday", "thursday",
                                                   "friday", "saturday", "sunday"};
constexpr std::array<std::string_view, 9> kPeople = {"two",  "three", "four", "five", "six",
                                                     "seven", "eight", "nine", "ten"};
constexpr std::array<std::string_view, 8> kTimes = {"noon",       "midnight", "lunchtime",
                                                    "teatime",    "dinnertime", "sunrise",
                                                    "half past seven", "quarter to nine"};
constexpr std::array<std::string_view, 48> kGuests = {
    "anna",   "ben",    "carla",  "david",  "emma",   "felix",  "grace",  "henry",
    "irene",  "jacob",  "karen",  "liam",   "maria",  "noah",   "olga",   "peter",
    "quinn",  "rosa",   "samuel", "tina",   "umar",   "vera",   "walter", "xenia",
    "yusuf",  "zoe",    "alice",  "bruno",  "clara",  "dmitri", "elena",  "frank",
    "gina",   "hugo",   "isla",   "jonas",  "kira",   "lars",   "mona",   "nils",
    "oscar",  "paula",  "rita",   "stefan", "tomas",  "ursula", "victor", "wanda"};
constexpr std::array<std::string_view, 24> kOccasions = {
    "birthday",   "anniversary", "graduation", "wedding",    "retirement", "engagement",
    "promotion",  "reunion",     "farewell",   "christening", "holiday",   "conference",
    "meeting",    "celebration", "housewarming", "homecoming", "festival", "surprise",
    "date",       "interview",   "lunch",      "brunch",     "supper",     "banquet"};

// Every sentence opens with the venue name, so prefixes of equal length
// that share the name are each other's nearest neighbours.
// Slots: {n} venue name, {a} area, {f} food, {p} price, {s} street,
// {d} day, {k} people, {t} time, {g} guest, {o} occasion.
constexpr std::array<std::string_view, 16> kBodies = {
    "{n} is in the {a} and serves {f} food",
    "{n} is a {p} {f} place in the {a}",
    "{n} serves {f} food at a {p} price",
    "{n} on {s} street is {p} and serves {f} food",
    "{n} is a {p} {f} restaurant on {s} street",
    "{n} in the {a} has a table for {k} on {d} at {t}",
    "{n} , the {f} place on {s} street , is open on {d}",
    "{n} is {p} , {g} booked it for a {o} on {d}",
    "{n} in the {a} is where {g} had the {o}",
    "{n} has {f} food and is on {s} street in the {a}",
    "{n} is {p} and a table for {k} is free at {t}",
    "{n} , a {f} spot in the {a} , is good for a {o}",
    "{n} near {s} street serves {f} food on {d}",
    "{n} is {p} and {g} says the {f} food is good",
    "{n} in the {a} can seat {k} for a {o}",
    "{n} on {s} street is in the {a}",
};

constexpr std::array<std::string_view, 4> kEndings = {"", " , thanks", " , please", " , right ?"};

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::size_t draw(std::uint64_t& state, std::size_t n) {
  return static_cast<std::size_t>((static_cast<unsigned __int128>(splitmix64(state)) * n) >> 64);
}

struct Venue {
  std::string name;
  std::size_t area, food, price, street;
};

}  // namespace

SyntheticCorpus make_synthetic_corpus(const SyntheticCorpusConfig& cfg) {
  if (cfg.name_first == 0 || cfg.name_first > kNameFirst.size() || cfg.name_second == 0 ||
      cfg.name_second > kNameSecond.size()) {
    throw ConfigError("synthetic corpus name vocabulary out of range");
  }
  std::uint64_t rng = cfg.seed;
  std::vector<Venue> venues;
  for (std::size_t i = 0; i < cfg.name_first; ++i) {
    for (std::size_t j = 0; j < cfg.name_second; ++j) {
      Venue v;
      v.name = std::string(kNameFirst[i]) + " " + std::string(kNameSecond[j]);
      v.area = draw(rng, kAreas.size());
      v.food = draw(rng, kFoods.size());
      v.price = draw(rng, kPrices.size());
      v.street = draw(rng, kStreets.size());
      venues.push_back(std::move(v));
    }
  }

  SyntheticCorpus out;
  out.template_count = kBodies.size() * kEndings.size();
  const std::size_t wanted = cfg.train + cfg.valid + cfg.test;
  std::unordered_set<std::string> seen;
  std::vector<std::string> all;
  all.reserve(wanted);
  for (std::size_t attempt = 0; all.size() < wanted; ++attempt) {
    if (attempt > 200 * wanted + 10000) {
      throw ConfigError("synthetic corpus cannot produce enough unique sentences");
    }
    const auto body = kBodies[draw(rng, kBodies.size())];
    const auto ending = kEndings[draw(rng, kEndings.size())];
    const Venue& v = venues[draw(rng, venues.size())];
    const auto day = kDays[draw(rng, kDays.size())];
    const auto people = kPeople[draw(rng, kPeople.size())];
    const auto time = kTimes[draw(rng, kTimes.size())];
    const auto guest = kGuests[draw(rng, kGuests.size())];
    const auto occasion = kOccasions[draw(rng, kOccasions.size())];

    std::string s;
    for (std::size_t i = 0; i < body.size(); ++i) {
      if (body[i] == '{' && i + 2 < body.size() && body[i + 2] == '}') {
        switch (body[i + 1]) {
          case 'n': s += v.name; break;
          case 'a': s += kAreas[v.area]; break;
          case 'f': s += kFoods[v.food]; break;
          case 'p': s += kPrices[v.price]; break;
          case 'd': s += day; break;
          case 'k': s += people; break;
          case 's': s += kStreets[v.street]; break;
          case 't': s += time; break;
          case 'g': s += guest; break;
          case 'o': s += occasion; break;
          default: throw ConfigError("unknown template slot");
        }
        i += 2;
      } else {
        s += body[i];
      }
    }
    s += ending;
    if (seen.insert(s).second) all.push_back(std::move(s));
  }
  auto it = all.begin();
  out.train.assign(it, it + static_cast<std::ptrdiff_t>(cfg.train));
  it += static_cast<std::ptrdiff_t>(cfg.train);
  out.valid.assign(it, it + static_cast<std::ptrdiff_t>(cfg.valid));
  it += static_cast<std::ptrdiff_t>(cfg.valid);
  out.test.assign(it, it + static_cast<std::ptrdiff_t>(cfg.test));
  return out;
}

}  // namespace surealm
