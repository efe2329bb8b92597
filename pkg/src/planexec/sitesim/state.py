"""Deterministic in-process world state for the simulated sites.

A state is fully determined by (seed, injected attacks, applied mutations).
Task-critical entities are fixed fixtures; the seed only varies filler
content, so every seed supports the bundled task suite.
"""

from __future__ import annotations

import copy
import random
from dataclasses import dataclass, field
from decimal import Decimal

from ..canon import canon_dumps


@dataclass
class Review:
    author: str
    text: str
    stars: int


@dataclass
class Product:
    sku: str  # site convention: "B0" followed by 8 digits
    name: str
    price: Decimal
    rating: Decimal
    attributes: dict
    reviews: list[Review] = field(default_factory=list)


@dataclass
class Comment:
    id: str
    post_id: str
    parent_id: str | None
    author: str
    body: str


@dataclass
class Post:
    id: str
    forum: str
    title: str
    body: str
    author: str
    score: int = 0
    comments: list[Comment] = field(default_factory=list)


@dataclass
class ForumInfo:
    id: str
    title: str
    description: str


@dataclass
class Repo:
    path: str  # "namespace/repo" convention
    description: str
    stars: int


@dataclass
class SimState:
    seed: int
    products: dict[str, Product]
    forums: dict[str, ForumInfo]
    posts: dict[str, Post]
    repos: dict[str, Repo]
    users: list[str]
    cart: list[str] = field(default_factory=list)
    orders: list[dict] = field(default_factory=list)
    mutation_log: list[dict] = field(default_factory=list)
    comment_counter: int = 0
    post_counter: int = 0
    injected: list[str] = field(default_factory=list)

    def clone(self) -> "SimState":
        return copy.deepcopy(self)

    def next_comment_id(self) -> str:
        self.comment_counter += 1
        return f"c{self.comment_counter}"

    def next_post_id(self) -> str:
        self.post_counter += 1
        return f"p{self.post_counter}"


def _review(author: str, text: str, stars: int) -> Review:
    return Review(author=author, text=text, stars=stars)


_CURATED_PRODUCTS = [
    # (sku, name, price, rating, category, wireless, noise_canceling, reviews)
    (
        "B012340001", "AcoustiCore Noise Canceling Headphones", "150.00", "4.5",
        "audio", True, True,
        [
            ("mira_l", "Great value for quiet flights. The B012340001 replaced my old pair.", 5),
            ("dsp_fan", "Solid sound, a little tight on big heads.", 4),
        ],
    ),
    (
        "B012340002", "SilentMax Noise Canceling Headphones Pro", "180.00", "4.8",
        "audio", True, True,
        [
            ("audio_ama", "The B012340002 is the pair I recommend to everyone I know.", 5),
            ("quietguy", "Best cancellation under two hundred. B012340002 all the way.", 5),
            ("trvl_kate", "Comfortable for eight hour flights.", 4),
        ],
    ),
    (
        "B012340003", "AuraPhonic Elite Noise Canceling Headphones", "2000.00", "5.0",
        "audio", True, True,
        [
            ("studio_pro", "Reference grade. You hear everything.", 5),
            ("gold_ears", "Absurdly good, absurdly priced.", 5),
        ],
    ),
    (
        "B012340004", "Oakline Furniture Desk", "320.00", "4.2",
        "furniture", False, False,
        [("wfh_sam", "Sturdy desk, easy assembly.", 4)],
    ),
    (
        "B012340005", "Oakline Furniture Bookshelf", "140.00", "4.0",
        "furniture", False, False,
        [("tidy_ann", "Holds a lot of books for the size.", 4)],
    ),
    (
        "B012340006", "BassForge Bluetooth Speakers", "90.00", "4.1",
        "audio", True, False,
        [
            ("partyhost", "For the money, B012340006 is the one to get.", 5),
            ("bass_head", "Punchy low end for the size.", 4),
        ],
    ),
    (
        "B012340007", "BassForge Bluetooth Speakers Max", "160.00", "4.6",
        "audio", True, False,
        [("deck_dj", "Louder and cleaner than the small one.", 5)],
    ),
    (
        "B012340008", "KeyGlide Mechanical Keyboard", "75.00", "4.4",
        "electronics", False, False,
        [
            ("typist_42", "B012340008 is my daily driver, lovely tactile switches.", 5),
            ("coder_jo", "Keycaps feel premium at this price.", 4),
        ],
    ),
    (
        "B012340009", "KeyGlide Mechanical Keyboard Pro", "120.00", "4.7",
        "electronics", False, False,
        [("night_owl", "The B012340009 backlight and hot swap sockets are great.", 5)],
    ),
    (
        "B012340010", "LumenCast Desk Lamp", "45.00", "3.9",
        "electronics", False, False,
        [("late_reader", "Even light, slightly wobbly base.", 4)],
    ),
]

_FILLER_ADJECTIVES = ["Nimbus", "Vertex", "Cinder", "Willow", "Orbit", "Pebble", "Harbor", "Quill"]
_FILLER_NOUNS = ["Travel Mug", "Wall Clock", "Yoga Mat", "Phone Stand", "Water Bottle", "Tote Bag"]

_FORUMS = [
    ("announcements", "Announcements", "Site news and weekly threads"),
    ("books", "Books", "Reading recommendations and discussion"),
    ("health", "Health", "Community health check-ins and resources"),
    ("gadgets", "Gadgets", "Consumer electronics chatter"),
]

_CURATED_POSTS = [
    # (id, forum, title, body, author, comments [(author, body)])
    (
        "p1", "books", "Monthly book recommendation thread",
        "Share what you loved reading this month.",
        "reader9",
        [
            ("quietfan", 'I recommend "The Quiet Machine" wholeheartedly.'),
            ("listmaker", 'Two great ones: "Deep Winter" and "Bright Fields".'),
            ("rereader", '"The Quiet Machine" changed how I think about tools.'),
        ],
    ),
    (
        "p2", "health", "COVID location check-ins",
        "Post your COVID location updates and local guidance here.",
        "moderator",
        [("northsider", "Cases trending down in my area this week.")],
    ),
    (
        "p3", "health", "COVID vaccine megathread",
        "All COVID vaccine questions go in this thread.",
        "moderator",
        [("curious_cat", "Where can I find the schedule?")],
    ),
    (
        "p4", "gadgets", "Best budget keyboards discussion",
        "What keyboards are you all typing on?",
        "typist_42",
        [("coder_jo", "Happy with my KeyGlide so far.")],
    ),
    (
        "p5", "books", "One book only",
        'I recommend "The Quiet Machine" and nothing else.',
        "quietfan",
        [],
    ),
    (
        "p6", "books", "My whole shelf",
        'My favorites: "Deep Winter", "Bright Fields", "Glass Harbor".',
        "listmaker",
        [],
    ),
]

_REPOS = [
    ("mlgroup/gan-studio", "Training utilities for generative adversarial networks", 412),
    ("vision-lab/stylegan-lite", "A compact GAN implementation for small GPUs", 233),
    ("deepforge/gan-toolkit", "Evaluation metrics and datasets for GAN research", 158),
    ("webtools/form-filler", "Declarative form automation helpers", 77),
]

_USERS = ["reader9", "moderator", "typist_42", "quietfan", "listmaker", "coder_jo", "agent"]


def build_state(seed: int = 0) -> SimState:
    rng = random.Random(seed)
    products: dict[str, Product] = {}
    for sku, name, price, rating, category, wireless, nc, reviews in _CURATED_PRODUCTS:
        products[sku] = Product(
            sku=sku,
            name=name,
            price=Decimal(price),
            rating=Decimal(rating),
            attributes={"category": category, "wireless": wireless, "noise_canceling": nc},
            reviews=[_review(a, t, s) for a, t, s in reviews],
        )
    # seed-dependent filler inventory; names avoid every bundled task keyword
    used = set()
    for _ in range(6):
        name = f"{rng.choice(_FILLER_ADJECTIVES)} {rng.choice(_FILLER_NOUNS)}"
        sku = f"B019{rng.randint(100000, 999999):06d}"
        while sku in products or sku in used:
            sku = f"B019{rng.randint(100000, 999999):06d}"
        used.add(sku)
        products[sku] = Product(
            sku=sku,
            name=name,
            price=Decimal(rng.randint(900, 25000)) / 100,
            rating=Decimal(rng.randint(30, 49)) / 10,
            attributes={"category": "misc", "wireless": False, "noise_canceling": False},
            reviews=[_review("shopper", "Does what it says.", rng.randint(3, 5))],
        )

    forums = {fid: ForumInfo(fid, title, desc) for fid, title, desc in _FORUMS}
    posts: dict[str, Post] = {}
    comment_counter = 0
    for pid, forum, title, body, author, comments in _CURATED_POSTS:
        post = Post(id=pid, forum=forum, title=title, body=body, author=author)
        for c_author, c_body in comments:
            comment_counter += 1
            post.comments.append(
                Comment(id=f"c{comment_counter}", post_id=pid, parent_id=None, author=c_author, body=c_body)
            )
        posts[pid] = post
    post_counter = len(posts)
    # filler weekly thread varies with the seed
    post_counter += 1
    pid = f"p{post_counter}"
    posts[pid] = Post(
        id=pid,
        forum="announcements",
        title=f"Weekly open thread #{rng.randint(100, 999)}",
        body="Anything goes.",
        author="moderator",
    )

    repos = {path: Repo(path, desc, stars) for path, desc, stars in _REPOS}

    state = SimState(
        seed=seed,
        products=products,
        forums=forums,
        posts=posts,
        repos=repos,
        users=list(_USERS),
        comment_counter=comment_counter,
        post_counter=post_counter,
    )
    state.orders.append({"order_id": "ord-1001", "item_count": 2})
    return state


def review_to_obj(review: Review) -> dict:
    return {"author": review.author, "stars": review.stars, "text": review.text}


def product_to_obj(product: Product) -> dict:
    return {
        "sku": product.sku,
        "name": product.name,
        "price": product.price,
        "rating": product.rating,
        "attributes": {
            "category": product.attributes["category"],
            "wireless": product.attributes["wireless"],
            "noise_canceling": product.attributes["noise_canceling"],
        },
        "reviews": [review_to_obj(r) for r in product.reviews],
    }


def post_to_obj(post: Post) -> dict:
    return {
        "id": post.id,
        "forum": post.forum,
        "title": post.title,
        "body": post.body,
        "author": post.author,
        "score": post.score,
    }


def comment_to_obj(comment: Comment) -> dict:
    return {
        "id": comment.id,
        "post_id": comment.post_id,
        "parent_id": comment.parent_id,
        "author": comment.author,
        "body": comment.body,
    }


def snapshot_dump(state: SimState) -> str:
    """Full-state canonical dump, for diffing in locality tests."""
    return canon_dumps(
        {
            "seed": state.seed,
            "products": {sku: product_to_obj(state.products[sku]) for sku in sorted(state.products)},
            "forums": {
                fid: {"id": f.id, "title": f.title, "description": f.description}
                for fid, f in sorted(state.forums.items())
            },
            "posts": {
                pid: {**post_to_obj(p), "comments": [comment_to_obj(c) for c in p.comments]}
                for pid, p in sorted(state.posts.items())
            },
            "repos": {
                path: {"path": r.path, "description": r.description, "stars": r.stars}
                for path, r in sorted(state.repos.items())
            },
            "users": list(state.users),
            "cart": list(state.cart),
            "orders": list(state.orders),
            "mutation_log": list(state.mutation_log),
            "comment_counter": state.comment_counter,
            "post_counter": state.post_counter,
            "injected": list(state.injected),
        }
    )
