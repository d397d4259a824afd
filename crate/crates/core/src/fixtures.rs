//! Deterministic synthetic corpus: 75 IT service contracts with their
//! database records, clause-structured Portuguese documents, an ingest
//! manifest and the benchmark question file.
//!
//! Two contracts are pinned because tests and examples refer to them:
//! 278/2023 (Oracle Database support, the only Oracle contract) and
//! 159/2021 (IBM Content Management support).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use chrono::{Datelike, Months, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::cms::seed::{write_csv, AmendmentRecord, ManagerRecord};
use crate::cms::{Cents, ContractRecord, Situation};
use crate::eval::{BenchmarkFile, BenchmarkQuestion, Binding, Expectation, QuestionKind};

pub const DEFAULT_SEED: u64 = 360;
pub const CONTRACT_COUNT: usize = 75;
pub const ACTIVE_COUNT: usize = 7;

pub const ORACLE_OCS: &str = "278/2023";
pub const IBM_OCS: &str = "159/2021";
const ORACLE_SUPPLIER: &str = "Oracle do Brasil Sistemas Ltda.";
const IBM_SUPPLIER: &str = "IBM Brasil Indústria Máquinas e Serviços Ltda.";

/// (legal name, products). IBM's list excludes Content Management, which is
/// reserved for 159/2021.
const SUPPLIERS: &[(&str, &[&str])] = &[
    (
        IBM_SUPPLIER,
        &["IBM Db2", "IBM Power Systems", "IBM Maximo", "IBM QRadar"],
    ),
    (
        "Microsoft Informática Ltda.",
        &[
            "Microsoft 365",
            "Microsoft Azure",
            "Microsoft SQL Server",
            "Microsoft Dynamics",
        ],
    ),
    (
        "SAP Brasil Ltda.",
        &["SAP ERP", "SAP Business Warehouse", "SAP SuccessFactors"],
    ),
    (
        "Red Hat Brasil Ltda.",
        &["Red Hat Enterprise Linux", "Red Hat OpenShift", "Red Hat Ansible"],
    ),
    (
        "Positivo Tecnologia S.A.",
        &["microcomputadores Positivo", "notebooks Positivo"],
    ),
    (
        "Dell Computadores do Brasil Ltda.",
        &[
            "servidores Dell PowerEdge",
            "storage Dell PowerStore",
            "notebooks Dell Latitude",
        ],
    ),
    (
        "Cisco do Brasil Ltda.",
        &["switches Cisco Catalyst", "roteadores Cisco ASR", "Cisco Webex"],
    ),
    ("Claro S.A.", &["links de dados MPLS", "telefonia móvel corporativa"]),
    (
        "Serviço Federal de Processamento de Dados - SERPRO",
        &["serviços de nuvem de governo", "validação biométrica"],
    ),
    ("TOTVS S.A.", &["TOTVS Protheus", "TOTVS RM"]),
    (
        "Stefanini Consultoria e Assessoria em Informática S.A.",
        &["central de serviços de TI", "sustentação de sistemas legados"],
    ),
    (
        "Algar Telecom S.A.",
        &["links de internet dedicados", "serviços de telefonia fixa"],
    ),
    (
        "Lenovo Tecnologia (Brasil) Ltda.",
        &["notebooks Lenovo ThinkPad", "servidores Lenovo ThinkSystem"],
    ),
    (
        "HP Brasil Indústria e Comércio de Equipamentos Eletrônicos Ltda.",
        &["impressoras HP LaserJet", "estações de trabalho HP Z"],
    ),
    ("Fortinet Brasil Ltda.", &["firewalls FortiGate", "FortiAnalyzer"]),
    ("Adobe Systems Brasil Ltda.", &["Adobe Creative Cloud", "Adobe Acrobat"]),
    ("Teltec Solutions Ltda.", &["VMware vSphere", "backup Veeam"]),
    ("Capgemini Brasil S.A.", &["fábrica de software", "testes de software"]),
    (
        "Módulo Security Solutions S.A.",
        &[
            "gestão de riscos de segurança da informação",
            "centro de operações de segurança",
        ],
    ),
    (
        "Tivit Terceirização de Processos, Serviços e Tecnologia S.A.",
        &["serviços de data center", "monitoração de ambiente de TI"],
    ),
];

const OBJECT_TEMPLATES: &[&str] = &[
    "Prestação de serviços de suporte técnico e atualização de versões do software {p}",
    "Fornecimento de licenças de uso de {p}, com garantia de atualização e suporte técnico",
    "Prestação de serviços de manutenção preventiva e corretiva de {p}",
    "Aquisição de {p}, incluindo instalação, configuração e garantia",
    "Prestação de serviços continuados de {p}",
    "Subscrição de {p}, com suporte técnico especializado",
];

const MANAGERS: &[(&str, &str)] = &[
    ("Ana Paula Ferreira", "Departamento de Infraestrutura de TI"),
    ("Bruno Carvalho Lima", "Departamento de Sistemas Corporativos"),
    ("Carla Menezes Rocha", "Departamento de Segurança da Informação"),
    ("Daniel Souza Martins", "Departamento de Infraestrutura de TI"),
    ("Eduarda Nogueira Pires", "Departamento de Atendimento ao Usuário"),
    ("Fernando Alves Costa", "Departamento de Telecomunicações"),
    ("Gabriela Ribeiro Santos", "Departamento de Sistemas Corporativos"),
    ("Henrique Barros Teixeira", "Departamento de Dados e Analytics"),
    ("Isabela Cunha Moreira", "Departamento de Arquitetura de TI"),
    ("João Victor Araújo", "Departamento de Infraestrutura de TI"),
    ("Larissa Gomes Cardoso", "Departamento de Contratações de TI"),
    ("Marcelo Duarte Freitas", "Departamento de Telecomunicações"),
];

const MODES: &[(&str, u32)] = &[("tender", 60), ("waiver_of_bidding", 22), ("inexigibility", 18)];

const MONTHS: &[u32] = &[12, 24, 30, 36, 48, 60];

/// The generated corpus, in memory.
#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub contracts: Vec<ContractRecord>,
    pub managers: Vec<ManagerRecord>,
    pub amendments: Vec<AmendmentRecord>,
    /// (source name, text file name, document text)
    pub documents: Vec<(String, String, String)>,
    pub benchmark: BenchmarkFile,
}

fn source_name(ocs: &str) -> String {
    format!("ocs_{}.pdf", ocs.replace('/', "_"))
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid fixture date")
}

fn end_after(start: NaiveDate, months: u32) -> NaiveDate {
    start
        .checked_add_months(Months::new(months))
        .and_then(|d| d.pred_opt())
        .expect("fixture end date")
}

fn email(name: &str) -> String {
    let parts: Vec<String> = name
        .split_whitespace()
        .map(|p| {
            p.chars()
                .map(|c| match c {
                    'á' | 'ã' | 'â' => 'a',
                    'é' | 'ê' => 'e',
                    'í' => 'i',
                    'ó' | 'ô' => 'o',
                    'ú' => 'u',
                    'ç' => 'c',
                    other => other.to_ascii_lowercase(),
                })
                .collect()
        })
        .collect();
    format!("{}.{}@empresa.example", parts[0], parts[parts.len() - 1])
}

fn weighted_mode(rng: &mut ChaCha8Rng) -> &'static str {
    let total: u32 = MODES.iter().map(|m| m.1).sum();
    let mut roll = rng.gen_range(0..total);
    for (mode, w) in MODES {
        if roll < *w {
            return mode;
        }
        roll -= w;
    }
    MODES[0].0
}

pub fn generate(seed: u64) -> FixtureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used_ids: BTreeSet<String> = [ORACLE_OCS, IBM_OCS].iter().map(|s| s.to_string()).collect();
    let mut used_objects = BTreeSet::new();
    let managers: Vec<&str> = MANAGERS.iter().map(|m| m.0).collect();

    let mut contracts = vec![
        ContractRecord {
            ocs: ORACLE_OCS.into(),
            object: "Prestação de serviços de suporte técnico e atualização de versões dos softwares Oracle Database e tecnologias associadas".into(),
            supplier: ORACLE_SUPPLIER.into(),
            manager: MANAGERS[7].0.into(),
            total_value: Cents(418_735_000),
            start_date: date(2023, 6, 1),
            end_date: date(2026, 5, 31),
            situation: Situation::Active,
            procurement_mode: "inexigibility".into(),
            source_file: Some(source_name(ORACLE_OCS)),
        },
        ContractRecord {
            ocs: IBM_OCS.into(),
            object: "Prestação de serviços de suporte técnico e atualização de versões do software IBM Content Management".into(),
            supplier: IBM_SUPPLIER.into(),
            manager: MANAGERS[1].0.into(),
            total_value: Cents(125_490_000),
            start_date: date(2021, 9, 15),
            end_date: date(2024, 9, 14),
            situation: Situation::Closed,
            procurement_mode: "inexigibility".into(),
            source_file: Some(source_name(IBM_OCS)),
        },
    ];
    for c in &contracts {
        used_objects.insert(c.object.clone());
    }

    while contracts.len() < CONTRACT_COUNT {
        let (supplier, products) = SUPPLIERS.choose(&mut rng).expect("suppliers");
        let product = products.choose(&mut rng).expect("products");
        let template = OBJECT_TEMPLATES.choose(&mut rng).expect("templates");
        let object = template.replace("{p}", product);
        if !used_objects.insert(object.clone()) {
            continue;
        }
        let year = rng.gen_range(2018..=2024);
        let ocs = loop {
            let id = format!("{}/{year}", rng.gen_range(10..=980));
            if used_ids.insert(id.clone()) {
                break id;
            }
        };
        let start = date(year, rng.gen_range(1..=12), rng.gen_range(1..=28));
        let end = end_after(start, *MONTHS.choose(&mut rng).expect("months"));
        contracts.push(ContractRecord {
            source_file: Some(source_name(&ocs)),
            ocs,
            object,
            supplier: supplier.to_string(),
            manager: managers.choose(&mut rng).expect("managers").to_string(),
            total_value: Cents(rng.gen_range(8_000_000..=1_800_000_000) / 10 * 10),
            start_date: start,
            end_date: end,
            situation: Situation::Closed,
            procurement_mode: weighted_mode(&mut rng).into(),
        });
    }

    // Six more active contracts among those still running past 2025.
    let mut candidates: Vec<usize> = (2..contracts.len())
        .filter(|&i| contracts[i].end_date >= date(2025, 1, 1))
        .collect();
    candidates.shuffle(&mut rng);
    let mut active: Vec<usize> = candidates.iter().copied().take(ACTIVE_COUNT - 1).collect();
    // not enough long-running contracts: extend some
    let mut extra = (2..contracts.len())
        .filter(|i| !active.contains(i))
        .collect::<Vec<_>>()
        .into_iter();
    while active.len() < ACTIVE_COUNT - 1 {
        let i = extra.next().expect("enough contracts");
        contracts[i].end_date = end_after(contracts[i].start_date.max(date(2024, 3, 1)), 36);
        active.push(i);
    }
    for &i in &active {
        contracts[i].situation = Situation::Active;
    }
    let mut suspended = 0;
    for c in contracts.iter_mut().skip(2) {
        if c.situation == Situation::Closed && c.end_date > date(2025, 6, 30) && suspended < 3 {
            c.situation = Situation::Suspended;
            suspended += 1;
        }
    }
    contracts.sort_by(|a, b| (a.start_date, &a.ocs).cmp(&(b.start_date, &b.ocs)));

    let managers_out: Vec<ManagerRecord> = MANAGERS
        .iter()
        .map(|(name, dept)| ManagerRecord {
            name: name.to_string(),
            department: dept.to_string(),
            email: email(name),
        })
        .collect();

    let mut amendments = Vec::new();
    for c in &contracts {
        if rng.gen_bool(0.35) {
            let signed_on = c.start_date + chrono::Days::new(rng.gen_range(90..300));
            let (description, delta) = if rng.gen_bool(0.5) {
                (
                    "Termo aditivo de reajuste de preços pelo índice contratual".to_string(),
                    c.total_value.0 / 20,
                )
            } else {
                (
                    "Termo aditivo de acréscimo quantitativo de até 25% do objeto".to_string(),
                    c.total_value.0 / 10,
                )
            };
            amendments.push(AmendmentRecord {
                ocs: c.ocs.clone(),
                signed_on,
                description,
                value_delta: Cents(delta),
            });
        }
    }

    // Two documents carry no id in their text; ingest resolves them through
    // the database's source_file column.
    let unlabeled: BTreeSet<String> = contracts
        .iter()
        .filter(|c| c.ocs != ORACLE_OCS && c.ocs != IBM_OCS)
        .step_by(31)
        .take(2)
        .map(|c| c.ocs.clone())
        .collect();
    let departments: BTreeMap<&str, &str> = MANAGERS.iter().copied().collect();
    let documents = contracts
        .iter()
        .map(|c| {
            let text = render_document(
                c,
                departments[c.manager.as_str()],
                !unlabeled.contains(&c.ocs),
                &mut rng,
            );
            let source = c.source_file.clone().expect("source file");
            let file = format!("docs/{}", source.replace(".pdf", ".txt"));
            (source, file, text)
        })
        .collect();

    let benchmark = benchmark(&contracts);
    FixtureSet {
        contracts,
        managers: managers_out,
        amendments,
        documents,
        benchmark,
    }
}

/// `1234567` cents as `R$ 12.345,67`.
pub fn brl(c: Cents) -> String {
    let reais = c.0 / 100;
    let digits = reais.to_string();
    let mut grouped = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            grouped.push('.');
        }
        grouped.push(ch);
    }
    format!("R$ {grouped},{:02}", c.0 % 100)
}

fn br_date(d: NaiveDate) -> String {
    d.format("%d/%m/%Y").to_string()
}

fn cnpj(rng: &mut ChaCha8Rng) -> String {
    format!(
        "{:02}.{:03}.{:03}/0001-{:02}",
        rng.gen_range(10..99),
        rng.gen_range(100..999),
        rng.gen_range(100..999),
        rng.gen_range(10..99)
    )
}

fn months_between(a: NaiveDate, b: NaiveDate) -> i32 {
    let b = b.succ_opt().expect("date");
    (b.year() - a.year()) * 12 + b.month() as i32 - a.month() as i32
}

fn render_document(c: &ContractRecord, department: &str, labeled: bool, rng: &mut ChaCha8Rng) -> String {
    let mut t = String::new();
    if labeled {
        let _ = writeln!(t, "CONTRATO Nº OCS {}", c.ocs);
    } else {
        let _ = writeln!(t, "CONTRATO DE PRESTAÇÃO DE SERVIÇOS");
    }
    let mode = match c.procurement_mode.as_str() {
        "waiver_of_bidding" => "dispensa de licitação, com fundamento no art. 75 da Lei nº 14.133/2021",
        "inexigibility" => "inexigibilidade de licitação, com fundamento no art. 74 da Lei nº 14.133/2021",
        _ => "licitação na modalidade pregão eletrônico, nos termos da Lei nº 14.133/2021",
    };
    let _ = write!(
        t,
        "\nCONTRATANTE: Empresa Pública de Fomento e Tecnologia, CNPJ 33.657.248/0001-89, com sede na cidade do Rio de Janeiro.\n\
         CONTRATADA: {}, CNPJ {}.\n\
         Contratação realizada por {mode}.\n\n\
         As partes acima qualificadas celebram o presente contrato, que se regerá pelas cláusulas e condições seguintes.\n\n",
        c.supplier,
        cnpj(rng)
    );
    let months = months_between(c.start_date, c.end_date);
    let penalty = rng.gen_range(5..=20);
    let days = [10, 15, 30].choose(rng).copied().unwrap_or(30);
    let _ = write!(
        t,
        "CLÁUSULA PRIMEIRA - OBJETO\n\
         Constitui objeto deste contrato: {}.\n\n\
         Parágrafo único. Integram este contrato, independentemente de transcrição, o termo de referência e a proposta comercial apresentada.\n\n\
         CLÁUSULA SEGUNDA - PRAZO DE VIGÊNCIA\n\
         O prazo de vigência deste contrato é de {months} meses, de {} a {}, podendo ser prorrogado nas hipóteses previstas em lei.\n\n\
         CLÁUSULA TERCEIRA - PREÇO\n\
         O valor total deste contrato é de {}, já incluídos todos os tributos, encargos e despesas necessários à sua execução.\n\n\
         CLÁUSULA QUARTA - PAGAMENTO\n\
         O pagamento será efetuado em até {days} dias após o atesto da nota fiscal pelo gestor, mediante crédito em conta corrente.\n\n\
         CLÁUSULA QUINTA - GESTÃO E FISCALIZAÇÃO\n\
         A gestão deste contrato caberá a {}, do {department}, a quem compete acompanhar a execução do objeto e atestar os serviços prestados.\n\n\
         CLÁUSULA SEXTA - PENALIDADES\n\
         O descumprimento total ou parcial das obrigações sujeitará a parte inadimplente a advertência e multa de até {penalty}% do valor total, sem prejuízo das demais sanções legais.\n\n\
         CLÁUSULA SÉTIMA - RESCISÃO\n\
         O contrato poderá ser rescindido nas hipóteses previstas em lei, assegurados o contraditório e a ampla defesa.\n\n\
         CLÁUSULA OITAVA - FORO\n\
         Fica eleito o foro da cidade do Rio de Janeiro para dirimir as questões oriundas deste contrato.\n",
        c.object,
        br_date(c.start_date),
        br_date(c.end_date),
        brl(c.total_value),
        c.manager,
    );
    if rng.gen_bool(0.5) {
        let _ = write!(
            t,
            "\nCLÁUSULA NONA - DISPOSIÇÕES GERAIS\n\
             Os casos omissos serão resolvidos pelas partes de acordo com a legislação aplicável.\n"
        );
    }
    t
}

fn ocs_binding(ocs: &str) -> Binding {
    Binding {
        column: Some("contracts.ocs".into()),
        value: ocs.into(),
    }
}

fn sub(v: &str) -> Expectation {
    Expectation::Substring { value: v.into() }
}

fn q(
    id: &str,
    kind: QuestionKind,
    template: &str,
    bindings: &[(&str, Binding)],
    expected: Vec<Expectation>,
) -> BenchmarkQuestion {
    BenchmarkQuestion {
        id: id.into(),
        kind,
        template: template.into(),
        bindings: bindings.iter().map(|(k, b)| (k.to_string(), b.clone())).collect(),
        expected,
    }
}

fn sql_lit(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn benchmark(contracts: &[ContractRecord]) -> BenchmarkFile {
    use QuestionKind::{Direct, Indirect};
    let find = |ocs: &str| contracts.iter().find(|c| c.ocs == ocs).expect("pinned contract");
    let oracle = find(ORACLE_OCS);
    let ibm = find(IBM_OCS);

    // A contract other than the pinned two for the manager and term questions.
    let other = contracts
        .iter()
        .find(|c| c.ocs != ORACLE_OCS && c.ocs != IBM_OCS && c.situation == Situation::Active)
        .expect("another active contract");
    let by_count = |key: fn(&ContractRecord) -> &str| {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for c in contracts {
            *counts.entry(key(c)).or_default() += 1;
        }
        counts
    };
    // a supplier with one contract whose first word names no other supplier
    let distinctive = |s: &str| {
        let short = short_name(s).to_lowercase();
        SUPPLIERS
            .iter()
            .filter(|(o, _)| o.to_lowercase().contains(&short))
            .count()
            == 1
    };
    let single_supplier = by_count(|c| c.supplier.as_str())
        .into_iter()
        .find(|(s, n)| *n == 1 && *s != ORACLE_SUPPLIER && distinctive(s))
        .map(|(s, _)| s.to_owned());
    let (supplier_q3, supplier_q3_short) = match &single_supplier {
        Some(s) => (s.clone(), short_name(s)),
        None => (ORACLE_SUPPLIER.to_owned(), "Oracle".to_owned()),
    };
    let busiest_manager = by_count(|c| c.manager.as_str())
        .into_iter()
        .max_by_key(|(m, n)| (*n, std::cmp::Reverse(*m)))
        .map(|(m, _)| m.to_owned())
        .expect("managers");
    let year_counts = |pred: &dyn Fn(&ContractRecord) -> Option<i32>| {
        let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
        for c in contracts {
            if let Some(y) = pred(c) {
                *counts.entry(y).or_default() += 1;
            }
        }
        counts
    };
    let end_year = year_counts(&|c| Some(c.end_date.year()))
        .into_iter()
        .filter(|(y, _)| *y >= 2025)
        .max_by_key(|(y, n)| (*n, std::cmp::Reverse(*y)))
        .map(|(y, _)| y)
        .expect("an end year");
    let waiver_year = year_counts(&|c| (c.procurement_mode == "waiver_of_bidding").then_some(c.start_date.year()))
        .into_iter()
        .max_by_key(|(y, n)| (*n, std::cmp::Reverse(*y)))
        .map(|(y, _)| y)
        .expect("a waiver year");
    let ibm_short = "IBM";

    let term_regex = |c: &ContractRecord| Expectation::Regex {
        pattern: format!(
            "(?:{}|{}).*(?:{}|{})",
            c.start_date,
            regex::escape(&br_date(c.start_date)),
            c.end_date,
            regex::escape(&br_date(c.end_date))
        ),
    };

    let questions = vec![
        q(
            "direct-subject",
            Direct,
            "What is the subject of the OCS nnn/yy contract?",
            &[("nnn/yy", ocs_binding(ORACLE_OCS))],
            vec![sub(ORACLE_OCS), sub("Oracle Database")],
        ),
        q(
            "direct-subject-search",
            Direct,
            "Do we have any contract whose subject is xxxx?",
            &[("xxxx", Binding { column: None, value: "IBM Content Management".into() })],
            vec![sub(IBM_OCS), sub("IBM Content Management")],
        ),
        q(
            "direct-supplier-search",
            Direct,
            "Do we have any contract with the supplier xxx?",
            &[("xxx", Binding { column: None, value: supplier_q3_short.clone() })],
            contracts
                .iter()
                .filter(|c| c.supplier == supplier_q3)
                .map(|c| sub(&c.ocs))
                .chain([sub(&supplier_q3)])
                .collect(),
        ),
        q(
            "direct-manager",
            Direct,
            "Who is the manager of the OCS nnn/yy contract?",
            &[("nnn/yy", ocs_binding(&other.ocs))],
            vec![sub(&other.ocs), sub(&other.manager)],
        ),
        q(
            "direct-supplier",
            Direct,
            "Who is the supplier of the nnn/yy contract?",
            &[("nnn/yy", ocs_binding(IBM_OCS))],
            vec![sub(IBM_OCS), sub(&ibm.supplier)],
        ),
        q(
            "direct-term",
            Direct,
            "What is the term of the OCS nnn/yy contract?",
            &[("nnn/yy", ocs_binding(&other.ocs))],
            vec![sub(&other.ocs), term_regex(other)],
        ),
        q(
            "indirect-active",
            Indirect,
            "How many active IT contracts do we currently have?",
            &[],
            vec![Expectation::NumericSql {
                sql: "SELECT COUNT(*) FROM contracts WHERE situation = 'active'".into(),
            }],
        ),
        q(
            "indirect-ending",
            Indirect,
            "List the contracts that will end in the year yy?",
            &[("yy", Binding { column: None, value: end_year.to_string() })],
            vec![Expectation::ValuesSql {
                sql: format!("SELECT ocs FROM contracts WHERE end_date LIKE '{end_year}-%' ORDER BY ocs"),
            }],
        ),
        q(
            "indirect-supplier-count",
            Indirect,
            "How many contracts do we have with supplier xxxx?",
            &[("xxxx", Binding { column: None, value: ibm_short.into() })],
            vec![Expectation::NumericSql {
                sql: format!("SELECT COUNT(*) FROM contracts WHERE supplier = {}", sql_lit(IBM_SUPPLIER)),
            }],
        ),
        q(
            "indirect-inexigibility",
            Indirect,
            "How many contracts have we signed due to inflexibility?",
            &[],
            vec![Expectation::NumericSql {
                sql: "SELECT COUNT(*) FROM contracts WHERE procurement_mode = 'inexigibility'".into(),
            }],
        ),
        q(
            "indirect-waivers",
            Indirect,
            "How many DLs (Exemptions from Tenders) were contracted in yy?",
            &[("yy", Binding { column: None, value: waiver_year.to_string() })],
            vec![Expectation::NumericSql {
                sql: format!(
                    "SELECT COUNT(*) FROM contracts WHERE procurement_mode = 'waiver_of_bidding' AND start_date LIKE '{waiver_year}-%'"
                ),
            }],
        ),
        q(
            "indirect-managers-of-company",
            Indirect,
            "Who are the managers of the contracts we have with company xxxx?",
            &[("xxxx", Binding { column: None, value: ibm_short.into() })],
            vec![Expectation::ValuesSql {
                sql: format!(
                    "SELECT DISTINCT manager FROM contracts WHERE supplier = {} ORDER BY manager",
                    sql_lit(IBM_SUPPLIER)
                ),
            }],
        ),
        q(
            "indirect-manager-count",
            Indirect,
            "How many contracts does employee xxxx have under his/her management?",
            &[("xxxx", Binding { column: Some("contracts.manager".into()), value: busiest_manager.clone() })],
            vec![Expectation::NumericSql {
                sql: format!("SELECT COUNT(*) FROM contracts WHERE manager = {}", sql_lit(&busiest_manager)),
            }],
        ),
        q(
            "indirect-summary",
            Indirect,
            "Show a summary of contract nnn/yy.",
            &[("nnn/yy", ocs_binding(ORACLE_OCS))],
            vec![
                sub(ORACLE_OCS),
                sub(&oracle.object),
                sub(&oracle.supplier),
                sub(&oracle.manager),
                Expectation::NumericSql {
                    sql: format!("SELECT total_value_cents / 100.0 FROM contracts WHERE ocs = '{ORACLE_OCS}'"),
                },
                sub(&oracle.start_date.to_string()),
                sub(&oracle.end_date.to_string()),
                sub(oracle.situation.as_str()),
            ],
        ),
    ];
    BenchmarkFile { questions }
}

/// First word of a legal name, used as the everyday supplier name.
fn short_name(legal: &str) -> String {
    legal.split_whitespace().next().unwrap_or(legal).to_owned()
}

/// Writes the corpus under `dir`.
pub fn write(set: &FixtureSet, dir: &Path) -> std::io::Result<()> {
    let io = |e: csv::Error| std::io::Error::other(e.to_string());
    std::fs::create_dir_all(dir.join("docs"))?;
    write_csv(&dir.join("contracts.csv"), &set.contracts).map_err(io)?;
    write_csv(&dir.join("managers.csv"), &set.managers).map_err(io)?;
    write_csv(&dir.join("amendments.csv"), &set.amendments).map_err(io)?;
    let mut manifest = String::new();
    for (source, file, text) in &set.documents {
        std::fs::write(dir.join(file), text)?;
        manifest.push_str(&json!({ "source": source, "text_file": file }).to_string());
        manifest.push('\n');
    }
    std::fs::write(dir.join("manifest.jsonl"), manifest)?;
    let bench = serde_json::to_string_pretty(&set.benchmark).expect("benchmark serializes") + "\n";
    std::fs::write(dir.join("benchmark.json"), bench)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_shape() {
        let set = generate(DEFAULT_SEED);
        assert_eq!(set.contracts.len(), CONTRACT_COUNT);
        assert_eq!(set.documents.len(), CONTRACT_COUNT);
        let active = set
            .contracts
            .iter()
            .filter(|c| c.situation == Situation::Active)
            .count();
        assert_eq!(active, ACTIVE_COUNT);
        let ids: BTreeSet<_> = set.contracts.iter().map(|c| c.ocs.clone()).collect();
        assert_eq!(ids.len(), CONTRACT_COUNT);
        for c in &set.contracts {
            c.validate().unwrap();
        }
        let oracle_db: Vec<_> = set
            .contracts
            .iter()
            .filter(|c| c.object.contains("Oracle Database") || c.supplier.contains("Oracle"))
            .map(|c| c.ocs.as_str())
            .collect();
        assert_eq!(oracle_db, [ORACLE_OCS]);
        assert_eq!(set.benchmark.questions.len(), 14);
    }

    #[test]
    fn deterministic() {
        let a = generate(DEFAULT_SEED);
        let b = generate(DEFAULT_SEED);
        assert_eq!(a.documents, b.documents);
        assert_eq!(a.benchmark, b.benchmark);
    }

    #[test]
    fn brl_format() {
        assert_eq!(brl(Cents(418_735_000)), "R$ 4.187.350,00");
        assert_eq!(brl(Cents(5)), "R$ 0,05");
        assert_eq!(brl(Cents(123_456)), "R$ 1.234,56");
    }
}
