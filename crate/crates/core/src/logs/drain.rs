//! Fixed-depth prefix-tree log template miner (Drain).
//!
//! Messages are split on whitespace and every token containing a digit is
//! masked to `<*>` before routing. The tree routes by token count, then by
//! the leading token(s); each leaf holds candidate templates which are
//! compared position-wise against the message.
//!
//! ```text
//! root ── len=3 ── "pod" ── [pod <*> created]
//!      │        └─ "image" ── [image pull failed]
//!      └─ len=4 ── ...
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const WILDCARD: &str = "<*>";

pub type TemplateId = usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrainConfig {
    /// Tree depth counting the root, the length layer and the leaf layer;
    /// the remaining layers route on leading tokens.
    pub depth: usize,
    pub similarity_threshold: f64,
    pub max_children: usize,
}

impl Default for DrainConfig {
    fn default() -> Self {
        DrainConfig {
            depth: 4,
            similarity_threshold: 0.5,
            max_children: 100,
        }
    }
}

impl DrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.depth < 3 {
            return Err(format!("drain depth must be at least 3, got {}", self.depth));
        }
        if !(0.0..=1.0).contains(&self.similarity_threshold) {
            return Err(format!(
                "drain similarity_threshold must lie in [0, 1], got {}",
                self.similarity_threshold
            ));
        }
        if self.max_children < 2 {
            return Err(format!("drain max_children must be at least 2, got {}", self.max_children));
        }
        Ok(())
    }

    fn prefix_layers(&self) -> usize {
        self.depth.saturating_sub(3).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogTemplate {
    pub template_id: TemplateId,
    pub tokens: Vec<String>,
}

impl LogTemplate {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// How a message maps onto the store without modifying it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum TemplateKey {
    Known(TemplateId),
    /// No stored template matches; the message's own masked tokens stand in.
    Novel(Vec<String>),
}

#[derive(Clone, Debug, Default, PartialEq)]
struct PrefixNode {
    children: BTreeMap<String, PrefixNode>,
    templates: Vec<TemplateId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StoredTemplate {
    template: LogTemplate,
    route: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct StoreRepr {
    config: DrainConfig,
    templates: Vec<StoredTemplate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemplateStore {
    config: DrainConfig,
    templates: Vec<StoredTemplate>,
    by_length: BTreeMap<usize, PrefixNode>,
}

impl Default for TemplateStore {
    fn default() -> Self {
        Self::new(DrainConfig::default())
    }
}

/// Split on whitespace and mask numeric tokens. If masking would leave no
/// literal token, the raw tokens are kept so templates always carry text.
pub fn preprocess(message: &str) -> Vec<String> {
    let raw: Vec<&str> = message.split_whitespace().collect();
    let masked: Vec<String> = raw
        .iter()
        .map(|t| {
            if t.bytes().any(|b| b.is_ascii_digit()) {
                WILDCARD.to_string()
            } else {
                (*t).to_string()
            }
        })
        .collect();
    if masked.iter().all(|t| t == WILDCARD) {
        raw.into_iter().map(str::to_string).collect()
    } else {
        masked
    }
}

impl TemplateStore {
    pub fn new(config: DrainConfig) -> Self {
        TemplateStore {
            config,
            templates: Vec::new(),
            by_length: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &DrainConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn template(&self, id: TemplateId) -> Option<&LogTemplate> {
        self.templates.get(id).map(|t| &t.template)
    }

    pub fn templates(&self) -> impl Iterator<Item = &LogTemplate> {
        self.templates.iter().map(|t| &t.template)
    }

    /// Match `message` against the store, generalizing the best template or
    /// creating a new one.
    pub fn mine(&mut self, message: &str) -> TemplateId {
        let tokens = preprocess(message);
        let route = self.insert_route(&tokens);
        let leaf = self.leaf(tokens.len(), &route).expect("route was just inserted");

        if let Some(id) = self.best_match(&leaf.templates, &tokens, false) {
            let template = &mut self.templates[id].template.tokens;
            for (slot, token) in template.iter_mut().zip(&tokens) {
                if slot != token {
                    *slot = WILDCARD.to_string();
                }
            }
            return id;
        }

        let id = self.templates.len();
        self.templates.push(StoredTemplate {
            template: LogTemplate {
                template_id: id,
                tokens: tokens.clone(),
            },
            route: route.clone(),
        });
        self.leaf_mut(tokens.len(), &route).templates.push(id);
        id
    }

    /// Look `message` up without learning. Wildcard positions count as
    /// matches here, so a message that was mined earlier keeps resolving to
    /// its template after that template generalized.
    pub fn resolve(&self, message: &str) -> (TemplateKey, Vec<String>) {
        let tokens = preprocess(message);
        if let Some(route) = self.search_route(&tokens) {
            if let Some(leaf) = self.leaf(tokens.len(), &route) {
                if let Some(id) = self.best_match(&leaf.templates, &tokens, true) {
                    return (TemplateKey::Known(id), self.templates[id].template.tokens.clone());
                }
            }
        }
        (TemplateKey::Novel(tokens.clone()), tokens)
    }

    /// Tab-separated dump: `template_id<TAB>tokens joined by space`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in self.templates() {
            let _ = writeln!(out, "{}\t{}", t.template_id, t.text());
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&StoreRepr {
            config: self.config.clone(),
            templates: self.templates.clone(),
        })
        .expect("template store serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let repr: StoreRepr = serde_json::from_str(text)?;
        let mut store = TemplateStore::new(repr.config);
        for stored in repr.templates {
            let len = stored.template.tokens.len();
            let id = stored.template.template_id;
            store.leaf_mut(len, &stored.route).templates.push(id);
            store.templates.push(stored);
        }
        Ok(store)
    }

    fn best_match(
        &self,
        candidates: &[TemplateId],
        tokens: &[String],
        wildcards_match: bool,
    ) -> Option<TemplateId> {
        let mut best: Option<(f64, usize, TemplateId)> = None;
        for &id in candidates {
            let template = &self.templates[id].template.tokens;
            let mut equal = 0usize;
            let mut params = 0usize;
            for (slot, token) in template.iter().zip(tokens) {
                if slot == WILDCARD {
                    params += 1;
                    if wildcards_match {
                        equal += 1;
                    }
                } else if slot == token {
                    equal += 1;
                }
            }
            let sim = equal as f64 / template.len() as f64;
            let better = match best {
                None => true,
                Some((s, p, _)) => sim > s || (sim == s && params > p),
            };
            if better {
                best = Some((sim, params, id));
            }
        }
        best.filter(|(sim, _, _)| *sim >= self.config.similarity_threshold)
            .map(|(_, _, id)| id)
    }

    fn insert_route(&mut self, tokens: &[String]) -> Vec<String> {
        let layers = self.config.prefix_layers().min(tokens.len());
        let max_children = self.config.max_children;
        let mut node = self.by_length.entry(tokens.len()).or_default();
        let mut route = Vec::with_capacity(layers);
        for token in &tokens[..layers] {
            let key = if node.children.contains_key(token) || node.children.len() < max_children {
                token.clone()
            } else {
                WILDCARD.to_string()
            };
            node = node.children.entry(key.clone()).or_default();
            route.push(key);
        }
        route
    }

    fn search_route(&self, tokens: &[String]) -> Option<Vec<String>> {
        let layers = self.config.prefix_layers().min(tokens.len());
        let mut node = self.by_length.get(&tokens.len())?;
        let mut route = Vec::with_capacity(layers);
        for token in &tokens[..layers] {
            let (key, next) = match node.children.get_key_value(token) {
                Some(kv) => kv,
                None => node.children.get_key_value(WILDCARD)?,
            };
            route.push(key.clone());
            node = next;
        }
        Some(route)
    }

    fn leaf(&self, len: usize, route: &[String]) -> Option<&PrefixNode> {
        let mut node = self.by_length.get(&len)?;
        for key in route {
            node = node.children.get(key)?;
        }
        Some(node)
    }

    fn leaf_mut(&mut self, len: usize, route: &[String]) -> &mut PrefixNode {
        let mut node = self.by_length.entry(len).or_default();
        for key in route {
            node = node.children.entry(key.clone()).or_default();
        }
        node
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokens(t: &LogTemplate) -> Vec<&str> {
        t.tokens.iter().map(String::as_str).collect()
    }

    #[test]
    fn first_message_becomes_template() {
        let mut store = TemplateStore::default();
        let id = store.mine("pod fn-a created");
        assert_eq!(tokens(store.template(id).unwrap()), ["pod", "fn-a", "created"]);
    }

    #[test]
    fn similar_messages_merge_with_wildcard() {
        let mut store = TemplateStore::default();
        let a = store.mine("pod fn-a created");
        let b = store.mine("pod fn-b created");
        assert_eq!(a, b);
        assert_eq!(tokens(store.template(a).unwrap()), ["pod", "<*>", "created"]);
    }

    #[test]
    fn dissimilar_messages_split() {
        let mut store = TemplateStore::default();
        let a = store.mine("scheduler delay 500ms");
        let b = store.mine("image pull failed");
        assert_ne!(a, b);
        assert_eq!(tokens(store.template(a).unwrap()), ["scheduler", "delay", "<*>"]);
    }

    #[test]
    fn below_threshold_in_same_leaf_splits() {
        // Same length and first token, one of four tokens equal: 0.25 < 0.5.
        let mut store = TemplateStore::default();
        let a = store.mine("pull image alpha ok");
        let b = store.mine("pull layer beta failed");
        assert_ne!(a, b);
    }

    #[test]
    fn numbers_are_masked() {
        assert_eq!(preprocess("took 12ms on node-3"), ["took", "<*>", "on", "<*>"]);
        assert_eq!(preprocess("404"), ["404"]);
    }

    #[test]
    fn resolve_tracks_generalized_templates() {
        let mut store = TemplateStore::default();
        let id = store.mine("user alice logged in from web");
        store.mine("user bob logged in from cli");
        store.mine("user carol logged out from api");
        let (key, toks) = store.resolve("user alice logged in from web");
        assert_eq!(key, TemplateKey::Known(id));
        assert_eq!(toks, store.template(id).unwrap().tokens);
        assert!(matches!(store.resolve("totally new line").0, TemplateKey::Novel(_)));
    }

    #[test]
    fn mining_never_removes_templates() {
        let mut store = TemplateStore::default();
        let mut count = 0;
        for msg in ["a b c", "a b d", "x y", "x z", "q", "a q c", "r s t u"] {
            store.mine(msg);
            assert!(store.len() >= count);
            count = store.len();
        }
    }

    #[test]
    fn json_round_trip_preserves_routing() {
        let mut store = TemplateStore::default();
        for msg in ["pod fn-a created", "pod fn-b created", "image pull failed"] {
            store.mine(msg);
        }
        let back = TemplateStore::from_json(&store.to_json()).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.resolve("pod fn-z created").0, TemplateKey::Known(0));
    }

    #[test]
    fn tsv_dump() {
        let mut store = TemplateStore::default();
        store.mine("pod fn-a created");
        store.mine("pod fn-b created");
        assert_eq!(store.to_tsv(), "0\tpod <*> created\n");
    }

    #[test]
    fn overflowing_children_route_to_wildcard() {
        let mut store = TemplateStore::new(DrainConfig {
            max_children: 2,
            ..DrainConfig::default()
        });
        let a = store.mine("alpha one done");
        let b = store.mine("beta one done");
        let c = store.mine("gamma one done");
        let d = store.mine("delta one done");
        assert_ne!(a, b);
        // gamma and delta share the wildcard branch and merge there.
        assert_eq!(c, d);
        assert_eq!(tokens(store.template(c).unwrap()), ["<*>", "one", "done"]);
    }
}
