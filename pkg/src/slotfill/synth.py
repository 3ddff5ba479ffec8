"""Deterministic template-grammar corpora for multi-domain tagging work.

A GrammarSpec holds whole-token templates ("play {track} by {artist}"),
per-slot lexicons (entries may span several tokens, which become B-/I-
chains), and an optional label alias that renames a slot's emitted label.

standard_suite() builds a fixed four-domain benchmark:

* music / podcast - near-twin domains.  They share scaffold words, a
  service-name lexicon, and one aliased slot pair (the same performer
  lexicon is labelled "artist" in music and "creator" in podcast).
  Twin templates split into three blocks: identifiable ones carry
  domain-unique entity lexicons, collapsible ones differ only in an
  O-labelled filler word that appears nowhere else, and contested ones
  differ only in a category carrier word that decides the artist-vs-
  creator label for shared performers.
* flights / dining - vocabulary fully disjoint from each other and from
  the twins, so domain identity there is trivially recoverable.

Training corpora draw entities from the head of each open lexicon and
test corpora from the full lexicon, so a fixed share of test entity
mentions are unseen at training time.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace

import numpy as np

from .data import Utterance
from .errors import ConfigError

_PLACEHOLDER_RE = re.compile(r"^\{([a-z_][a-z0-9_]*)\}$")


@dataclass
class GrammarSpec:
    domain_name: str
    templates: list
    slot_lexicons: dict
    label_alias: dict = None
    shared_lexicon_fraction: float = 0.0

    def __post_init__(self):
        if not self.domain_name:
            raise ConfigError("domain_name must be non-empty")
        if not self.templates:
            raise ConfigError("templates must be non-empty")
        if not 0.0 <= self.shared_lexicon_fraction <= 1.0:
            raise ConfigError(
                f"shared_lexicon_fraction must be in [0, 1], "
                f"got {self.shared_lexicon_fraction}"
            )
        alias = self.label_alias or {}
        for src, dst in alias.items():
            if src not in self.slot_lexicons:
                raise ConfigError(f"alias source {src!r} is not a slot")
            if dst in self.slot_lexicons:
                raise ConfigError(f"alias target {dst!r} clashes with a slot name")
        for tpl in self.templates:
            for slot in template_slots(tpl):
                if slot not in self.slot_lexicons:
                    raise ConfigError(
                        f"template {tpl!r} uses slot {slot!r} with no lexicon"
                    )
        for slot, entries in self.slot_lexicons.items():
            if not entries:
                raise ConfigError(f"slot {slot!r} has an empty lexicon")
            for entry in entries:
                if not entry or not all(entry.split(" ")):
                    raise ConfigError(f"slot {slot!r} has a malformed entry {entry!r}")

    def label_for(self, slot):
        return (self.label_alias or {}).get(slot, slot)

    def to_dict(self):
        return {
            "domain_name": self.domain_name,
            "templates": list(self.templates),
            "slot_lexicons": {k: list(v) for k, v in self.slot_lexicons.items()},
            "label_alias": dict(self.label_alias) if self.label_alias else None,
            "shared_lexicon_fraction": self.shared_lexicon_fraction,
        }

    @classmethod
    def from_dict(cls, d):
        allowed = {
            "domain_name", "templates", "slot_lexicons", "label_alias",
            "shared_lexicon_fraction",
        }
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown grammar spec keys: {sorted(unknown)}")
        return cls(
            domain_name=d.get("domain_name", ""),
            templates=d.get("templates", []),
            slot_lexicons=d.get("slot_lexicons", {}),
            label_alias=d.get("label_alias"),
            shared_lexicon_fraction=d.get("shared_lexicon_fraction", 0.0),
        )


def template_slots(template):
    """Slot names referenced by a template, in order."""
    out = []
    for token in template.split(" "):
        m = _PLACEHOLDER_RE.match(token)
        if m:
            out.append(m.group(1))
    return out


def generate(spec, n, rng):
    """Sample n utterances from the grammar.

    Each draw picks a template uniformly, then one lexicon entry per slot
    uniformly; multi-token entries emit B- then I- labels.  Deterministic
    for a given generator state.
    """
    if n < 1:
        raise ConfigError(f"need n >= 1, got {n}")
    out = []
    for _ in range(n):
        template = spec.templates[rng.integers(len(spec.templates))]
        tokens, labels = [], []
        for word in template.split(" "):
            m = _PLACEHOLDER_RE.match(word)
            if m is None:
                tokens.append(word)
                labels.append("O")
                continue
            slot = m.group(1)
            entries = spec.slot_lexicons[slot]
            entry = entries[rng.integers(len(entries))]
            label = spec.label_for(slot)
            for j, part in enumerate(entry.split(" ")):
                tokens.append(part)
                labels.append(("B-" if j == 0 else "I-") + label)
        out.append(Utterance(tokens, labels, spec.domain_name))
    return out


# ----------------------------------------------------------------------
# standard four-domain suite
# ----------------------------------------------------------------------

def _name_pool():
    # 180 unique single tokens -> 90 two-token performer names; every token
    # occurs in exactly one entry, which keeps the combined vocabulary
    # weakly monotone in the shared-lexicon fraction.
    prefixes = ["mar", "vel", "tor", "lin", "kas", "rho", "zan", "pel",
                "gor", "fin", "hal", "dru", "sor", "bex", "qui"]
    suffixes = ["low", "ern", "iss", "und", "ova", "ett", "ash", "orn",
                "ale", "ik", "us", "ra"]
    tokens = [p + s for p in prefixes for s in suffixes]
    return [f"{tokens[2 * i]} {tokens[2 * i + 1]}" for i in range(len(tokens) // 2)]


_PERFORMERS = _name_pool()  # 90 entries; [0:30] shared, [30:60] music, [60:90] podcast

_SERVICES = [
    "tunely", "waveply", "castify", "streamora", "audioglow", "playdeck",
    "soundhub", "mixaroo", "echofy", "listenup", "beamcast", "fmharbor",
    "dialwave", "auralis", "chirpbox", "vibrato", "murmurly", "bandloft",
    "clipnest", "tonefall", "hummbrowse", "quaverly", "sonaria", "pitchline",
]  # [0:8] shared region, [8:16] music private, [16:24] podcast private

_TRACKS = [f"{a} {n}" for a in
           ["midnight", "solar", "velvet", "golden", "broken", "electric",
            "silent", "crimson", "wandering", "paper"]
           for n in ["rain", "tide", "horizon", "letters", "parade", "embers",
                     "mirrors", "avenue"]][:60]

_ALBUMS = [f"{a} {n}" for a in
           ["neon", "scarlet", "winter", "summer", "echoing", "minor"]
           for n in ["sessions", "tapes", "anthology", "reverie", "postcards",
                     "sketches"]]

_GENRES = ["jazz", "techno", "folk", "blues", "ambient", "disco", "soul",
           "grunge", "trance", "deep house", "acid jazz", "slow bossa"]

_EPISODES = [f"{a} {n}" for a in
             ["lost", "forgotten", "unlikely", "secret", "final", "opening",
              "strange", "brave", "gentle", "sudden"]
             for n in ["voyage", "blueprint", "interview", "experiment",
                       "origins", "detour", "reckoning", "lesson"]][:60]

_SHOWS = [f"{a} {n}" for a in
          ["daily", "hidden", "curious", "quiet", "modern", "rusty",
           "distant", "amber"]
          for n in ["archive", "dispatch", "chronicle", "workshop", "signal",
                    "notebook", "frontier", "harbor"]][:40]

_TOPICS = ["history", "startups", "chess", "privacy", "cinema", "folklore",
           "gardening", "espionage", "ancient maps", "night trains",
           "ocean myths", "quiet storms"]

_PLAYLISTS = ["rainy drive", "gym pump", "focus flow", "sunset chill",
              "road trip", "late study", "morning boost", "deep sleep"]

_LENGTHS = ["twenty minutes", "ten minutes", "forty minutes",
            "sixty minutes", "ninety minutes"]

_CITIES = ["boston", "denver", "chicago", "seattle", "atlanta", "portland",
           "new york", "los angeles", "san diego", "las vegas", "miami",
           "austin", "dallas", "phoenix", "detroit", "orlando",
           "salt lake city", "tucson", "omaha", "reno", "memphis", "tulsa",
           "boise", "fresno"]

_AIRLINES = ["aerolux", "polar wing", "skyhopper", "stratoway", "nimbusair",
             "vectra", "altaline", "sun glider", "cloudrunner", "zephyrus",
             "pacifica", "borealis"]

_DATES = ["tomorrow", "monday", "tuesday", "wednesday", "thursday", "friday",
          "saturday", "sunday", "next monday", "next friday", "march fifth",
          "april second", "june tenth", "july first", "weekend"]

_CABINS = ["economy", "business", "first class", "premium"]

_CUISINES = ["thai", "pan asian", "sushi", "tapas", "ramen", "vegan",
             "korean", "wood fired", "lebanese", "sicilian", "cajun",
             "basque"]

_AREAS = ["downtown", "midtown", "riverside", "old town", "chinatown",
          "uptown", "lakeside", "westside", "union square", "cedar hill",
          "bay point", "maple grove"]

_DISHES = ["dumplings", "paella", "gnocchi", "ceviche", "bibimbap", "pho",
           "carbonara", "tiramisu", "baklava", "falafel", "lamb tagine",
           "short ribs", "miso broth", "green curry", "flatbread",
           "sesame noodles"]

_TIMES = ["noon", "seven pm", "eight thirty", "half past six", "midday",
          "nine pm", "six fifteen", "brunch"]

_RATINGS = ["four star", "five star", "top rated", "cozy", "fancy", "cheap"]

# Twin templates come in three blocks with distinct roles:
#   - identifiable: carry domain-unique slot lexicons (tracks vs episodes)
#     plus an explicit type word, so these utterances always reveal their
#     domain and entity spans can be typed from the scaffold alone;
#   - collapsible: identical across the twins except one filler token
#     drawn from six disjoint pairs (please/kindly, mate/folks,
#     tonight/anyway, directly/shortly, alright/cheers,
#     sometime/whenever) and carry only identically-labelled slots; the
#     fillers occur nowhere else, so erasing the filler distinctions
#     costs the tagger nothing;
#   - contested: identical across the twins except a category carrier
#     (single/demo vs rerun/recap) that alone decides whether a shared
#     performer is labelled artist or creator, so the carrier cannot be
#     erased without mislabelling.
_MUSIC_TEMPLATES = [
    # identifiable
    "play the track {track} by {artist}",
    "queue the album {album} by {artist}",
    "play some {genre} music",
    "put my {playlist} playlist on",
    "play the track {track} on {service}",
    "queue the album {album} again",
    "shuffle some {genre} hits",
    # collapsible
    "open {service} please",
    "start {service} mate",
    "put {service} on tonight",
    "switch to {service} directly",
    "skip this one please",
    "turn it up mate",
    "turn it down tonight",
    "switch it off directly",
    "pause it alright",
    "resume it sometime",
    "play it again alright",
    "stop it now sometime",
    # contested
    "play the newest single {track} by {artist}",
    "queue another single {track} by {artist}",
    "i want that demo by {artist}",
    "find the latest demo from {artist}",
    "play every single from {artist}",
]

_PODCAST_TEMPLATES = [
    # identifiable
    "play the episode {episode} by {artist}",
    "queue the series {show} by {artist}",
    "browse shows about {topic}",
    "play one {length} episode",
    "play the episode {episode} on {service}",
    "queue the series {show} again",
    "browse some {length} shows",
    # collapsible
    "open {service} kindly",
    "start {service} folks",
    "put {service} on anyway",
    "switch to {service} shortly",
    "skip this one kindly",
    "turn it up folks",
    "turn it down anyway",
    "switch it off shortly",
    "pause it cheers",
    "resume it whenever",
    "play it again cheers",
    "stop it now whenever",
    # contested
    "play the newest rerun {episode} by {artist}",
    "queue another rerun {episode} by {artist}",
    "i want that recap by {artist}",
    "find the latest recap from {artist}",
    "play every recap from {artist}",
]

_FLIGHTS_TEMPLATES = [
    "book flight leaving {origin} {date}",
    "fly {airline} arriving {destination}",
    "book {cabin} seat {date}",
    "depart {origin} nonstop",
    "fly {airline} {date}",
    "book flight arriving {destination}",
    "return flight leaving {origin}",
    "book {cabin} seat via {airline}",
    "depart {origin} arriving {destination}",
    "book nonstop flight {date}",
]

_DINING_TEMPLATES = [
    "reserve a {cuisine} table",
    "locate a spot serving {dish}",
    "reserve a table near {area}",
    "locate a {rating} restaurant",
    "reserve a table around {time}",
    "locate a restaurant serving {dish}",
    "reserve a {cuisine} table near {area}",
    "locate a {rating} spot serving {dish}",
    "reserve a table near {area} around {time}",
    "locate a restaurant rated {rating}",
]


def _blend(pool, private_lo, size, fraction):
    """Shared-prefix + private-suffix lexicon of fixed size.

    The shared part is a prefix of the pool head; the private part is a
    prefix of the region starting at private_lo.  Prefix nesting is what
    makes the combined vocabulary weakly monotone in `fraction`.
    """
    k = int(round(fraction * size))
    return pool[:k] + pool[private_lo : private_lo + (size - k)]


def suite_specs(shared_lexicon_fraction=0.7):
    """GrammarSpecs for the four standard domains, in fixed order."""
    f = shared_lexicon_fraction
    music = GrammarSpec(
        domain_name="music",
        templates=_MUSIC_TEMPLATES,
        slot_lexicons={
            "artist": _blend(_PERFORMERS, 30, 30, f),
            "track": _TRACKS,
            "album": _ALBUMS,
            "genre": _GENRES,
            "playlist": _PLAYLISTS,
            "service": _blend(_SERVICES, 8, 8, f),
        },
        shared_lexicon_fraction=f,
    )
    podcast = GrammarSpec(
        domain_name="podcast",
        templates=_PODCAST_TEMPLATES,
        slot_lexicons={
            "artist": _blend(_PERFORMERS, 60, 30, f),
            "show": _SHOWS,
            "episode": _EPISODES,
            "topic": _TOPICS,
            "length": _LENGTHS,
            "service": _blend(_SERVICES, 16, 8, f),
        },
        label_alias={"artist": "creator"},
        shared_lexicon_fraction=f,
    )
    flights = GrammarSpec(
        domain_name="flights",
        templates=_FLIGHTS_TEMPLATES,
        slot_lexicons={
            "origin": _CITIES,
            "destination": _CITIES,
            "airline": _AIRLINES,
            "date": _DATES,
            "cabin": _CABINS,
        },
    )
    dining = GrammarSpec(
        domain_name="dining",
        templates=_DINING_TEMPLATES,
        slot_lexicons={
            "cuisine": _CUISINES,
            "area": _AREAS,
            "dish": _DISHES,
            "time": _TIMES,
            "rating": _RATINGS,
        },
    )
    return {s.domain_name: s for s in (music, podcast, flights, dining)}


@dataclass
class Suite:
    specs: dict
    train: dict
    test: dict

    @property
    def domains(self):
        return list(self.specs)

    def combined_train(self):
        return [u for d in self.specs for u in self.train[d]]

    def combined_test(self):
        return [u for d in self.specs for u in self.test[d]]


# Small closed classes (weekdays, ratings, genre names, ...) are fully
# seen in training; open entity lexicons hold out their tail so test
# utterances carry never-trained surfaces that exercise the UNK pathway.
_CLOSED_SLOTS = frozenset(
    {"genre", "playlist", "topic", "length", "cabin", "date", "time", "rating"}
)


def _training_view(spec, holdout_fraction):
    """Spec with the tail of every open lexicon reserved for test time."""
    if holdout_fraction <= 0:
        return spec
    lex = {}
    for slot, entries in spec.slot_lexicons.items():
        if slot in _CLOSED_SLOTS:
            lex[slot] = entries
        else:
            held = max(1, int(round(holdout_fraction * len(entries))))
            lex[slot] = entries[: len(entries) - held]
    return replace(spec, slot_lexicons=lex)


# The media twins dominate the benchmark the way media commands dominate
# real assistant traffic; flights and dining are smaller satellite
# domains.  Per-domain corpus sizes are the weight times the per-domain
# base count.
_DOMAIN_WEIGHTS = {"music": 1.5, "podcast": 1.5, "flights": 0.5, "dining": 0.5}


def standard_suite(seed, train_per_domain=2000, test_per_domain=400,
                   shared_lexicon_fraction=0.7, holdout_fraction=0.25,
                   domain_weights=None):
    """Generate the standard four-domain benchmark, deterministically.

    Training corpora draw entity slots from the head of each lexicon;
    test corpora draw from the full lexicon, so roughly a quarter of
    test entity mentions are unseen surfaces.  Per-domain corpus sizes
    are ``weight * per_domain`` with the standard weights unless a
    ``domain_weights`` mapping overrides them.
    """
    weights = _DOMAIN_WEIGHTS if domain_weights is None else domain_weights
    specs = suite_specs(shared_lexicon_fraction)
    children = np.random.SeedSequence(seed).spawn(2 * len(specs))
    train, test = {}, {}
    for i, (name, spec) in enumerate(specs.items()):
        w = weights.get(name, 1.0)
        train[name] = generate(
            _training_view(spec, holdout_fraction),
            max(1, int(round(w * train_per_domain))),
            np.random.Generator(np.random.PCG64(children[2 * i])),
        )
        test[name] = generate(
            spec, max(1, int(round(w * test_per_domain))),
            np.random.Generator(np.random.PCG64(children[2 * i + 1])),
        )
    return Suite(specs, train, test)
