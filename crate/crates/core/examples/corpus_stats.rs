//! Parses a trigger-annotated sentence, prints its trigger statistics and
//! shows the tag-scheme conversions.

use tmn::corpus::{compute_stats, parse_corpus_str, serialize_corpus, Scheme};

const TEXT: &str = "#ENT 0 7 RES
#ENT 1 7 RES
We\tO\t_
had\tO\tT-0
a\tO\t_
fantastic\tO\t_
lunch\tO\tT-0
at\tO\tT-0
Rumble\tB-RES\t_
Fish\tI-RES\t_
yesterday\tO\t_
where\tO\t_
the\tO\tT-1
food\tO\tT-1
is\tO\tT-1
my\tO\t_
favorite\tO\t_
.\tO\t_

#ENT 0 1 PER
Alice\tB-PER\t_
chairs\tO\tT-0
the\tO\t_
board\tO\tT-0
";

fn main() -> tmn::Result<()> {
    let corpus = parse_corpus_str(TEXT, Scheme::Bio, "inline")?;
    for s in &corpus {
        println!("{}", s.sentence.tokens().join(" "));
        for t in &s.triggers {
            let words: Vec<&str> = t.indices().iter().map(|&i| s.sentence.tokens()[i].as_str()).collect();
            println!("  trigger {:?} -> entity at token {}", words, t.entity_index);
        }
        println!("  BIOES: {}", s.tags.labels().join(" "));
        println!("  BIO:   {}", s.tags.to_scheme(Scheme::Bio).labels().join(" "));
    }
    println!("{}", serde_json::to_string_pretty(&compute_stats(&corpus))?);
    print!("{}", serialize_corpus(&corpus[1..], Scheme::Bio));
    Ok(())
}
