"""Bundled word lists.

BASE_NOUNS name ground-truth synthetic classes (the "real" labels); the
naming vocabulary draws from UNRELATED_NOUNS. The two lists are disjoint so
cluster names can never collide with real class names.
"""

BASE_NOUNS = (
    "dog", "cat", "bus", "tree", "house", "bird", "fish", "chair", "table", "clock",
    "apple", "train", "boat", "horse", "shoe", "lamp", "bridge", "flower", "truck", "bottle",
    "guitar", "piano", "camera", "ladder", "mirror", "pencil", "basket", "candle", "hammer", "kettle",
    "jacket", "helmet", "pillow", "carpet", "engine", "garden", "island", "meadow", "castle", "tunnel",
    "wagon", "violin", "trumpet", "barrel", "anchor", "feather", "lantern", "magnet", "needle", "oven",
    "palace", "quilt", "rocket", "saddle", "teapot", "umbrella", "valley", "whistle", "anvil", "beacon",
    "cabin", "dagger", "easel", "fiddle", "goblet", "harbor", "igloo", "jigsaw", "kayak", "locket",
    "mantle", "nutmeg", "orchid", "parrot", "quarry", "ribbon", "sickle", "tripod", "urchin", "vessel",
)

UNRELATED_NOUNS = (
    "abbey", "acorn", "alloy", "amber", "arbor", "argon", "attic", "auger", "awning", "badge",
    "bagel", "baler", "banjo", "barge", "basil", "baton", "bayou", "bezel", "bison", "blaze",
    "bluff", "bobbin", "boiler", "bonnet", "booth", "borax", "bough", "bramble", "brook", "bugle",
    "bunker", "burlap", "bushel", "cairn", "caliper", "canyon", "carafe", "cargo", "cedar", "cellar",
    "chalice", "chasm", "chisel", "cider", "cinder", "cistern", "citadel", "clover", "cobalt", "cocoon",
    "comet", "copper", "coral", "cornet", "cosmos", "crater", "creek", "crypt", "cupola", "cutlass",
    "cymbal", "decoy", "delta", "denim", "dinghy", "dome", "dowel", "dune", "ember", "epoch",
    "ermine", "fable", "falcon", "fennel", "ferry", "fjord", "flagon", "flint", "foyer", "fresco",
    "frigate", "fungus", "gable", "galley", "gazebo", "geyser", "gimlet", "girder", "glacier", "gorge",
    "granite", "grotto", "gully", "gusset", "halyard", "hamlet", "hangar", "heather", "hemlock", "henge",
    "hinge", "hollow", "husk", "ingot", "inlet", "ivory", "jetty", "joist", "juniper", "keel",
    "kiln", "knoll", "lagoon", "lathe", "lattice", "ledger", "lichen", "lintel", "llama", "loam",
    "lotus", "lumber", "lyre", "maple", "marble", "marsh", "mast", "mesa", "mica", "mill",
    "minnow", "moat", "molar", "monsoon", "moor", "mortar", "mosaic", "moss", "mural", "myrrh",
    "nacre", "nebula", "nickel", "nomad", "oasis", "obelisk", "ochre", "onyx", "opal", "osprey",
    "otter", "oxbow", "paddock", "pagoda", "parapet", "parka", "pebble", "pelican", "pewter", "phial",
    "pier", "pinion", "pith", "plateau", "plinth", "plume", "pollen", "poplar", "prism", "pulley",
    "pumice", "pylon", "quartz", "quay", "quill", "raft", "rampart", "raven", "reef", "resin",
    "riddle", "rivet", "rudder", "rune", "rushes", "saffron", "sapling", "scarab", "schooner", "sconce",
    "scythe", "sextant", "shale", "shingle", "silo", "sinew", "slate", "sloop", "sluice", "spindle",
    "spire", "sprig", "spur", "stave", "steppe", "stylus", "summit", "sundial", "swamp", "talon",
    "tarn", "tassel", "thicket", "thimble", "tiller", "timber", "topaz", "trellis", "trough", "tundra",
    "turbine", "turret", "tusk", "twine", "vapor", "vellum", "verge", "vista", "wharf", "willow",
    "windlass", "wren", "yoke", "zephyr", "zinc", "zither",
)

CONSONANTS = "bcdfgjklmnprstvz"
VOWELS = "aeiou"
