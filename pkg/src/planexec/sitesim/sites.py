"""Endpoint handlers for the simulated shop, forum, and repo sites.

One connector routes every endpoint id to its handler, enforces each site's
header conventions, counts calls (used by isolation property tests), and logs
every mutation. Read handlers are pure; identical state and arguments always
produce byte-identical responses.
"""

from __future__ import annotations

from ..errors import SiteError
from .state import (
    Comment,
    Post,
    SimState,
    comment_to_obj,
    post_to_obj,
    product_to_obj,
    review_to_obj,
)

FORUM_HEADER = "X-Experimental-API"


def _word_match(tokens: list[str], text: str) -> bool:
    words = set(text.casefold().split())
    return all(token in words for token in tokens)


class SimConnector:
    """In-process stand-in for the three sites' trusted APIs."""

    def __init__(self, state: SimState):
        self.state = state
        self.call_count = 0
        self.calls: list[str] = []

    def clone(self) -> "SimConnector":
        return SimConnector(self.state.clone())

    def call(self, endpoint_id: str, args: dict, headers: dict | None = None):
        self.call_count += 1
        self.calls.append(endpoint_id)
        handler = _HANDLERS.get(endpoint_id)
        if handler is None:
            raise SiteError("unknown_endpoint", f"no such endpoint {endpoint_id!r}")
        if endpoint_id.startswith("forum."):
            # site convention: every forum request needs the experimental header
            if not headers or headers.get(FORUM_HEADER) != "true":
                raise SiteError("missing_header", f"forum requires {FORUM_HEADER}: true")
        return handler(self.state, args or {})


def _arg(args: dict, name: str):
    if name not in args:
        raise SiteError("missing_argument", f"missing argument {name!r}")
    return args[name]


# --- shop ---------------------------------------------------------------------

def _shop_search(state: SimState, args: dict):
    query = _arg(args, "query")
    # convention: terms are joined with "%"; each term must match a whole word
    tokens = [t.casefold() for t in query.split("%") if t]
    if not tokens:
        return []
    return [
        product_to_obj(state.products[sku])
        for sku in sorted(state.products)
        if _word_match(tokens, state.products[sku].name)
    ]


def _shop_get_product(state: SimState, args: dict):
    sku = _arg(args, "sku")
    product = state.products.get(sku)
    if product is None:
        raise SiteError("not_found", f"no product {sku!r}")
    return product_to_obj(product)


def _shop_get_reviews(state: SimState, args: dict):
    sku = _arg(args, "sku")
    product = state.products.get(sku)
    if product is None:
        raise SiteError("not_found", f"no product {sku!r}")
    return [review_to_obj(r) for r in product.reviews]


def _shop_add_to_cart(state: SimState, args: dict):
    sku = _arg(args, "sku")
    if sku not in state.products:
        raise SiteError("not_found", f"no product {sku!r}")
    state.cart.append(sku)
    state.mutation_log.append({"op": "shop.add_to_cart", "sku": sku})
    return {"count": len(state.cart), "items": list(state.cart)}


def _shop_get_cart(state: SimState, args: dict):
    return {"count": len(state.cart), "items": list(state.cart)}


def _shop_checkout(state: SimState, args: dict):
    confirm = _arg(args, "confirm")
    if not confirm:
        raise SiteError("not_confirmed", "checkout requires confirm=true")
    order = {"order_id": f"ord-{1001 + len(state.orders)}", "item_count": len(state.cart)}
    state.orders.append(order)
    state.cart.clear()
    state.mutation_log.append({"op": "shop.checkout", "order_id": order["order_id"]})
    return dict(order)


def _shop_get_order_history(state: SimState, args: dict):
    return [dict(order) for order in state.orders]


def _shop_list_categories(state: SimState, args: dict):
    return sorted({p.attributes["category"] for p in state.products.values()})


# --- forum --------------------------------------------------------------------

def _forum_list_forums(state: SimState, args: dict):
    return [
        {"id": f.id, "title": f.title, "description": f.description}
        for _, f in sorted(state.forums.items())
    ]


def _forum_get_forum(state: SimState, args: dict):
    fid = _arg(args, "forum_id")
    forum = state.forums.get(fid)
    if forum is None:
        raise SiteError("not_found", f"no forum {fid!r}")
    return {"id": forum.id, "title": forum.title, "description": forum.description}


def _forum_list_posts(state: SimState, args: dict):
    fid = _arg(args, "forum_id")
    if fid not in state.forums:
        raise SiteError("not_found", f"no forum {fid!r}")
    return [post_to_obj(p) for _, p in sorted(state.posts.items()) if p.forum == fid]


def _forum_get_post(state: SimState, args: dict):
    pid = _arg(args, "post_id")
    post = state.posts.get(pid)
    if post is None:
        raise SiteError("not_found", f"no post {pid!r}")
    return post_to_obj(post)


def _forum_search_posts(state: SimState, args: dict):
    query = _arg(args, "query")
    tokens = query.casefold().split()
    if not tokens:
        return []
    return [
        post_to_obj(p)
        for _, p in sorted(state.posts.items())
        if _word_match(tokens, f"{p.title} {p.body}")
    ]


def _forum_get_comments(state: SimState, args: dict):
    pid = _arg(args, "post_id")
    post = state.posts.get(pid)
    if post is None:
        raise SiteError("not_found", f"no post {pid!r}")
    return [comment_to_obj(c) for c in post.comments]


def _find_comment(state: SimState, cid: str):
    for post in state.posts.values():
        for comment in post.comments:
            if comment.id == cid:
                return post, comment
    return None, None


def _forum_get_comment(state: SimState, args: dict):
    cid = _arg(args, "comment_id")
    _, comment = _find_comment(state, cid)
    if comment is None:
        raise SiteError("not_found", f"no comment {cid!r}")
    return comment_to_obj(comment)


def _forum_create_post(state: SimState, args: dict):
    fid = _arg(args, "forum_id")
    if fid not in state.forums:
        raise SiteError("not_found", f"no forum {fid!r}")
    pid = state.next_post_id()
    state.posts[pid] = Post(
        id=pid, forum=fid, title=_arg(args, "title"), body=_arg(args, "body"), author="agent"
    )
    state.mutation_log.append({"op": "forum.create_post", "post_id": pid})
    return pid


def _forum_create_comment(state: SimState, args: dict):
    pid = _arg(args, "post_id")
    post = state.posts.get(pid)
    if post is None:
        raise SiteError("not_found", f"no post {pid!r}")
    cid = state.next_comment_id()
    post.comments.append(
        Comment(id=cid, post_id=pid, parent_id=None, author="agent", body=_arg(args, "body"))
    )
    state.mutation_log.append({"op": "forum.create_comment", "post_id": pid, "comment_id": cid})
    return cid


def _forum_edit_comment(state: SimState, args: dict):
    cid = _arg(args, "comment_id")
    _, comment = _find_comment(state, cid)
    if comment is None:
        raise SiteError("not_found", f"no comment {cid!r}")
    comment.body = _arg(args, "body")
    state.mutation_log.append({"op": "forum.edit_comment", "comment_id": cid})
    return comment_to_obj(comment)


def _forum_delete_comment(state: SimState, args: dict):
    cid = _arg(args, "comment_id")
    post, comment = _find_comment(state, cid)
    if comment is None:
        raise SiteError("not_found", f"no comment {cid!r}")
    post.comments.remove(comment)
    state.mutation_log.append({"op": "forum.delete_comment", "comment_id": cid})
    return True


def _forum_upvote_post(state: SimState, args: dict):
    pid = _arg(args, "post_id")
    post = state.posts.get(pid)
    if post is None:
        raise SiteError("not_found", f"no post {pid!r}")
    post.score += 1
    state.mutation_log.append({"op": "forum.upvote_post", "post_id": pid})
    return post.score


def _forum_get_user(state: SimState, args: dict):
    username = _arg(args, "username")
    if username not in state.users:
        raise SiteError("not_found", f"no user {username!r}")
    return {"username": username, "joined": "2024-01-01"}


def _forum_list_user_posts(state: SimState, args: dict):
    username = _arg(args, "username")
    if username not in state.users:
        raise SiteError("not_found", f"no user {username!r}")
    return [post_to_obj(p) for _, p in sorted(state.posts.items()) if p.author == username]


def _forum_list_user_comments(state: SimState, args: dict):
    username = _arg(args, "username")
    if username not in state.users:
        raise SiteError("not_found", f"no user {username!r}")
    return [
        comment_to_obj(c)
        for _, p in sorted(state.posts.items())
        for c in p.comments
        if c.author == username
    ]


def _forum_export_data(state: SimState, args: dict):
    username = _arg(args, "username")
    if username not in state.users:
        raise SiteError("not_found", f"no user {username!r}")
    posts = sum(1 for p in state.posts.values() if p.author == username)
    comments = sum(1 for p in state.posts.values() for c in p.comments if c.author == username)
    return {"username": username, "posts": posts, "comments": comments}


# --- repo ---------------------------------------------------------------------

def _repo_list_repos(state: SimState, args: dict):
    return [
        {"path": r.path, "description": r.description, "stars": r.stars}
        for _, r in sorted(state.repos.items())
    ]


def _repo_get_repo(state: SimState, args: dict):
    path = _arg(args, "path")
    repo = state.repos.get(path)
    if repo is None:
        raise SiteError("not_found", f"no repo {path!r}")
    return {"path": repo.path, "description": repo.description, "stars": repo.stars}


def _repo_search_repos(state: SimState, args: dict):
    query = _arg(args, "query")
    tokens = query.casefold().split()
    if not tokens:
        return []
    return [
        {"path": r.path, "description": r.description, "stars": r.stars}
        for _, r in sorted(state.repos.items())
        if _word_match(tokens, f"{r.path.replace('/', ' ').replace('-', ' ')} {r.description}")
    ]


_HANDLERS = {
    "shop.search": _shop_search,
    "shop.get_product": _shop_get_product,
    "shop.get_reviews": _shop_get_reviews,
    "shop.add_to_cart": _shop_add_to_cart,
    "shop.get_cart": _shop_get_cart,
    "shop.checkout": _shop_checkout,
    "shop.get_order_history": _shop_get_order_history,
    "shop.list_categories": _shop_list_categories,
    "forum.list_forums": _forum_list_forums,
    "forum.get_forum": _forum_get_forum,
    "forum.list_posts": _forum_list_posts,
    "forum.get_post": _forum_get_post,
    "forum.search_posts": _forum_search_posts,
    "forum.get_comments": _forum_get_comments,
    "forum.get_comment": _forum_get_comment,
    "forum.create_post": _forum_create_post,
    "forum.create_comment": _forum_create_comment,
    "forum.edit_comment": _forum_edit_comment,
    "forum.delete_comment": _forum_delete_comment,
    "forum.upvote_post": _forum_upvote_post,
    "forum.get_user": _forum_get_user,
    "forum.list_user_posts": _forum_list_user_posts,
    "forum.list_user_comments": _forum_list_user_comments,
    "forum.export_data": _forum_export_data,
    "repo.list_repos": _repo_list_repos,
    "repo.get_repo": _repo_get_repo,
    "repo.search_repos": _repo_search_repos,
}
