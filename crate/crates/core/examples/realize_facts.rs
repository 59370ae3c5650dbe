//! Turns triples and E2E-style attribute lists into single-fact sentences
//! with a template registry.
//!
//! cargo run --example realize_facts

use d2t::facts::{e2e_to_triples, load_templates, realize_all, Template, TemplateRegistry, Triple};
use d2t::synthetic::templates;

fn main() -> d2t::Result<()> {
    let reg = templates();
    println!("{} toy templates", reg.len());
    let triples = vec![
        Triple::new("Allen Forrest", "occupation", "singer")?,
        Triple::new("Allen Forrest", "genre", "pop")?,
        Triple::new("Allen Forrest", "birthPlace", "Fort Campbell")?,
    ];
    for f in realize_all(&triples, &reg)? {
        println!(
            "  {:<45} <- ({}, {}, {})",
            f.text, f.source.subject, f.source.predicate, f.source.object
        );
    }

    // attribute lists carry the entity name separately
    let attrs = vec![
        ("eatType".to_string(), "pub".to_string()),
        ("food".to_string(), "Italian".to_string()),
        ("area".to_string(), "riverside".to_string()),
    ];
    let e2e = e2e_to_triples(Some("The Mill"), &attrs)?;
    for f in realize_all(&e2e, &reg)? {
        println!("  {}", f.text);
    }

    // a predicate without a template is an error, never a silent skip
    let mut small = TemplateRegistry::new("demo");
    small.insert(Template::new("genre", "<s> performs <o> music.")?)?;
    match realize_all(&triples, &small) {
        Ok(_) => println!("unexpected success"),
        Err(e) => println!("small registry: {e}"),
    }

    // registries round-trip through JSONL
    let dir = tempfile::tempdir().map_err(|e| d2t::Error::io(std::env::temp_dir(), e))?;
    let path = dir.path().join("templates.jsonl");
    std::fs::write(&path, reg.to_jsonl()).map_err(|e| d2t::Error::io(&path, e))?;
    let back = load_templates(&path, "toy")?;
    println!("reloaded {} templates from {}", back.len(), path.display());
    Ok(())
}
