//! Minimal document model for rendered product pages.
//!
//! Pages are trees of [`Element`]s. Every element of the base page gets a
//! stable `bid` from a depth-first numbering, so ids survive scrolling and
//! interventions. Layout is a single column: leaves carry a fixed height and
//! containers stack their children. Elements inserted by interventions take
//! the box of the sibling they follow, so they never shift the layout.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::catalog::{Price, Product};

/// Attribute carried by every element inserted by an intervention.
pub const INSERTED_MARKER: (&str, &str) = ("data-note", "promo");

pub const STORE_ORIGIN: &str = "http://shop.local";

/// Semantic role used for structured extraction; not rendered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Plain,
    Title,
    Rating,
    Price,
    Stock,
    AddToCart,
    Inserted,
    Input,
    Select,
    Link { href: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub tag: String,
    pub bid: Option<String>,
    pub attrs: Vec<(String, String)>,
    pub text: Option<String>,
    pub children: Vec<Element>,
    pub role: Role,
    /// Layout height of a leaf, in pixels. Ignored for containers.
    pub height: u32,
}

impl Element {
    fn container(tag: &str, class: &str, children: Vec<Element>) -> Self {
        Element {
            tag: tag.into(),
            bid: None,
            attrs: class_attr(class),
            text: None,
            children,
            role: Role::Plain,
            height: 0,
        }
    }

    fn leaf(tag: &str, class: &str, text: impl Into<String>, height: u32) -> Self {
        Element {
            tag: tag.into(),
            bid: None,
            attrs: class_attr(class),
            text: Some(text.into()),
            children: Vec::new(),
            role: Role::Plain,
            height,
        }
    }

    fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    fn with_attr(mut self, name: &str, value: impl Into<String>) -> Self {
        self.attrs.push((name.into(), value.into()));
        self
    }

    fn link(text: &str, href: &str) -> Self {
        Element::leaf("a", "", text, 24)
            .with_attr("href", href)
            .with_role(Role::Link { href: href.into() })
    }

    /// An element inserted by an intervention, carrying the marker attribute.
    pub fn inserted(tag: &str, class: &str, text: impl Into<String>) -> Self {
        Element::leaf(tag, class, text, 0)
            .with_attr(INSERTED_MARKER.0, INSERTED_MARKER.1)
            .with_role(Role::Inserted)
    }

    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_str())
    }

    pub fn is_inserted(&self) -> bool {
        self.attr(INSERTED_MARKER.0) == Some(INSERTED_MARKER.1)
    }

    fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Depth-first walk over this element and its descendants.
    pub fn walk(&self) -> Vec<&Element> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(e) = stack.pop() {
            out.push(e);
            for c in e.children.iter().rev() {
                stack.push(c);
            }
        }
        out
    }

    fn walk_mut(&mut self, f: &mut impl FnMut(&mut Element)) {
        f(self);
        for c in &mut self.children {
            c.walk_mut(f);
        }
    }
}

fn class_attr(class: &str) -> Vec<(String, String)> {
    if class.is_empty() {
        Vec::new()
    } else {
        vec![("class".into(), class.into())]
    }
}

/// A rendered page: its URL, the tab title and the element tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub url: String,
    pub title: String,
    pub root: Element,
}

impl Page {
    pub fn find_role(&self, pred: impl Fn(&Role) -> bool) -> Vec<&Element> {
        self.root.walk().into_iter().filter(|e| pred(&e.role)).collect()
    }

    pub fn find_bid(&self, bid: &str) -> Option<&Element> {
        self.root.walk().into_iter().find(|e| e.bid.as_deref() == Some(bid))
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut Element)) {
        self.root.walk_mut(&mut f);
    }

    /// Inserts `new` as the next sibling of the first element matching
    /// `anchor`. Returns false when no element matches.
    pub fn insert_after(&mut self, anchor: impl Fn(&Element) -> bool, new: Element) -> bool {
        fn go(parent: &mut Element, anchor: &dyn Fn(&Element) -> bool, new: &mut Option<Element>) -> bool {
            if let Some(pos) = parent.children.iter().position(anchor) {
                let e = new.take().expect("inserted once");
                parent.children.insert(pos + 1, e);
                return true;
            }
            parent.children.iter_mut().any(|c| go(c, anchor, new))
        }
        let mut slot = Some(new);
        go(&mut self.root, &anchor, &mut slot)
    }

    /// Removes every element carrying the intervention marker.
    pub fn strip_inserted(&self) -> Page {
        fn go(e: &Element) -> Element {
            Element {
                children: e.children.iter().filter(|c| !c.is_inserted()).map(go).collect(),
                ..e.clone()
            }
        }
        Page {
            root: go(&self.root),
            ..self.clone()
        }
    }

    /// Full-page markup (not pruned).
    pub fn markup(&self) -> String {
        let mut out = String::new();
        render(&self.root, 0, &mut out);
        out
    }

    /// Total layout height of the page.
    pub fn height(&self) -> u32 {
        layout_height(&self.root)
    }

    /// Page restricted to elements whose layout box intersects
    /// `[top, top + viewport)`; containers are kept when any descendant is.
    pub fn prune(&self, top: u32, viewport: u32) -> Option<Element> {
        let (lo, hi) = (top, top.saturating_add(viewport));
        let mut y = 0u32;
        prune_rec(&self.root, &mut y, lo, hi)
    }
}

fn layout_height(e: &Element) -> u32 {
    if e.is_inserted() {
        0
    } else if e.is_leaf() {
        e.height
    } else {
        e.children.iter().map(layout_height).sum()
    }
}

/// Returns the pruned copy of `e`, advancing `y` past its box. Inserted
/// elements share the box of the preceding sibling.
fn prune_rec(e: &Element, y: &mut u32, lo: u32, hi: u32) -> Option<Element> {
    if e.is_leaf() {
        let (top, h) = (*y, e.height);
        *y += h;
        let visible = top < hi && top + h.max(1) > lo;
        return visible.then(|| e.clone());
    }
    let mut kept = Vec::new();
    let mut prev_box: Option<(u32, u32)> = None;
    for c in &e.children {
        if c.is_inserted() {
            if let Some((top, h)) = prev_box {
                if top < hi && top + h.max(1) > lo {
                    kept.push(c.clone());
                }
            }
            continue;
        }
        let start = *y;
        if let Some(pc) = prune_rec(c, y, lo, hi) {
            kept.push(pc);
        }
        prev_box = Some((start, *y - start));
    }
    (!kept.is_empty()).then(|| Element {
        children: kept,
        ..e.clone()
    })
}

/// Indented markup for an element subtree.
pub fn render_element(e: &Element) -> String {
    let mut out = String::new();
    render(e, 0, &mut out);
    out
}

fn render(e: &Element, depth: usize, out: &mut String) {
    let indent = "  ".repeat(depth);
    let _ = write!(out, "{indent}<{}", e.tag);
    if let Some(bid) = &e.bid {
        let _ = write!(out, " bid=\"{}\"", escape(bid));
    }
    for (n, v) in &e.attrs {
        let _ = write!(out, " {n}=\"{}\"", escape(v));
    }
    out.push('>');
    if let Some(t) = &e.text {
        out.push_str(&escape(t));
    }
    if e.children.is_empty() {
        let _ = writeln!(out, "</{}>", e.tag);
        return;
    }
    out.push('\n');
    for c in &e.children {
        render(c, depth + 1, out);
    }
    let _ = writeln!(out, "{indent}</{}>", e.tag);
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

pub fn product_url(product_id: &str) -> String {
    format!("{STORE_ORIGIN}/product/{product_id}.html")
}

pub fn format_rating(rating: u8) -> String {
    format!("Rating: {rating}")
}

pub fn parse_rating(text: &str) -> Option<u8> {
    text.strip_prefix("Rating: ")?.trim().parse().ok()
}

/// Renders the store's product page. Markup is a pure function of the
/// product.
pub fn render_product_page(product: &Product) -> Page {
    let home = format!("{STORE_ORIGIN}/");
    let category_href = format!("{STORE_ORIGIN}/category/{}.html", slug(&product.category));
    let header = Element::container(
        "header",
        "page-header",
        vec![
            Element::link("One Stop Market", &home).with_attr("class", "logo"),
            Element::container(
                "ul",
                "header links",
                vec![
                    Element::link("My Account", &format!("{STORE_ORIGIN}/customer/account/")),
                    Element::link("My Wish List", &format!("{STORE_ORIGIN}/wishlist/")),
                    Element::link("Sign Out", &format!("{STORE_ORIGIN}/customer/account/logout/")),
                ],
            ),
            Element::leaf("input", "input-text", "", 40)
                .with_attr("id", "search")
                .with_attr("placeholder", "Search entire store here...")
                .with_role(Role::Input),
        ],
    );
    let breadcrumbs = Element::container(
        "div",
        "breadcrumbs",
        vec![
            Element::link("Home", &home),
            Element::link(&product.category, &category_href),
            Element::leaf("strong", "", product.title.clone(), 24),
        ],
    );
    let info = Element::container(
        "div",
        "product-info-main",
        vec![
            Element::leaf("h1", "page-title", product.title.clone(), 80).with_role(Role::Title),
            Element::leaf("div", "product-reviews-summary", format_rating(product.rating), 30).with_role(Role::Rating),
            Element::leaf("span", "price", product.price.display_usd(), 50)
                .with_attr("data-price-amount", product.price.to_string())
                .with_role(Role::Price),
            Element::leaf("div", "stock available", "In stock", 24).with_role(Role::Stock),
            Element::leaf("div", "product attribute sku", format!("SKU: {}", product.id), 24),
            Element::leaf("label", "label", "Qty", 24),
            Element::leaf("input", "input-text qty", "", 40)
                .with_attr("id", "qty")
                .with_attr("value", "1")
                .with_role(Role::Input),
            Element::leaf("button", "action primary tocart", "Add to Cart", 50)
                .with_attr("id", "product-addtocart-button")
                .with_role(Role::AddToCart),
            Element::leaf("button", "action towishlist", "Add to Wish List", 24),
            Element::leaf("button", "action tocompare", "Add to Compare", 24),
        ],
    );
    let mut details = vec![Element::leaf("div", "data item title", "Details", 40)];
    let description = [
        format!("{} ships from and is sold by One Stop Market.", product.title),
        format!("Listed in the {} department.", product.category),
        "Please read the product description and specifications carefully before ordering.".to_string(),
        "Colors may vary slightly from the images shown due to screen settings.".to_string(),
        "Contact customer service with any questions about this item.".to_string(),
        "Orders are processed within two business days.".to_string(),
    ];
    for line in description {
        details.push(Element::leaf("p", "", line, 72));
    }
    details.push(Element::leaf("div", "data item title", "More Information", 40));
    for (k, v) in [
        ("Product ID", product.id.clone()),
        ("Category", product.category.clone()),
        ("Condition", "New".to_string()),
        ("Warranty", "Manufacturer".to_string()),
        ("Seller", "One Stop Market".to_string()),
    ] {
        details.push(Element::leaf("tr", "", format!("{k}: {v}"), 36));
    }
    details.push(Element::leaf("h2", "", "Customer Reviews", 40));
    details.push(
        Element::leaf("select", "sorter-options", "Most Recent", 40)
            .with_attr("options", "Most Recent|Most Helpful")
            .with_role(Role::Select),
    );
    for i in 1..=5 {
        details.push(Element::leaf("p", "review", format!("Review {i}: verified purchase."), 96));
    }
    let main = Element::container(
        "main",
        "page-main",
        vec![info, Element::container("div", "product info detailed", details)],
    );
    let footer = Element::container(
        "footer",
        "page-footer",
        vec![
            Element::link("Privacy and Cookie Policy", &format!("{STORE_ORIGIN}/privacy/")),
            Element::link("Search Terms", &format!("{STORE_ORIGIN}/search/terms/")),
            Element::link("Contact Us", &format!("{STORE_ORIGIN}/contact/")),
            Element::leaf("small", "copyright", "Copyright One Stop Market", 128),
        ],
    );
    let mut root = Element::container("body", "catalog-product-view", vec![header, breadcrumbs, main, footer]);
    let mut next = 1u32;
    root.walk_mut(&mut |e| {
        e.bid = Some(next.to_string());
        next += 1;
    });
    Page {
        url: product_url(&product.id),
        title: product.title.clone(),
        root,
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect()
}

/// Structured reading of a (possibly pruned) page: what a scripted policy
/// can extract from the visible region.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PageView {
    pub url: String,
    pub title: Option<String>,
    pub price: Option<Price>,
    pub rating: Option<u8>,
    pub inserted_texts: Vec<String>,
    pub add_to_cart_bid: Option<String>,
}

impl PageView {
    pub fn extract(url: &str, root: Option<&Element>) -> Self {
        let mut view = PageView {
            url: url.to_string(),
            ..Default::default()
        };
        let Some(root) = root else { return view };
        for e in root.walk() {
            let text = e.text.as_deref().unwrap_or("");
            match &e.role {
                Role::Title => view.title = Some(text.to_string()),
                Role::Price => view.price = text.parse().ok(),
                Role::Rating => view.rating = parse_rating(text),
                Role::Inserted => view.inserted_texts.push(text.to_string()),
                Role::AddToCart => view.add_to_cart_bid = e.bid.clone(),
                _ => {}
            }
        }
        view
    }
}
